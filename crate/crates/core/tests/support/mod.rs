#![allow(dead_code)]

pub mod micro;
pub mod oracle;
pub mod scenarios;
