#[allow(dead_code)]
pub mod gradsuite;
