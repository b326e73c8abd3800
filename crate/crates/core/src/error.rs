use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in class {class} map")]
    NonFinite { class: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown schedule `{0}` (expected lambda_re, lambda_cse, lambda_noc or lr)")]
    UnknownSchedule(String),
    #[error("class {class} is not present in the label vector")]
    ClassNotPresent { class: usize },
    #[error("label vector has no positive class")]
    NoPositiveLabel,
    #[error("prediction contains the ignore value 255 at pixel {0}")]
    IgnoreInPrediction(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u8, classes: usize },
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("unknown CRF plugin `{requested}`; registered: [{registered}]")]
    UnknownPlugin { requested: String, registered: String },
    #[error("corrupt state: {0}")]
    Corrupt(String),
}

#[macro_export]
#[doc(hidden)]
macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}

#[macro_export]
#[doc(hidden)]
macro_rules! arg_err {
    ($($arg:tt)*) => { $crate::error::Error::InvalidArgument(alloc::format!($($arg)*)) };
}
