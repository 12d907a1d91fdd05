#![allow(dead_code)]

pub mod lpcheck;
pub mod oracle;
pub mod rational;
