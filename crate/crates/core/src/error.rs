use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid_arg {
    ($($arg:tt)*) => {
        $crate::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

macro_rules! invalid_state {
    ($($arg:tt)*) => {
        $crate::Error::InvalidState(alloc::format!($($arg)*))
    };
}

pub(crate) use invalid_arg;
pub(crate) use invalid_state;
