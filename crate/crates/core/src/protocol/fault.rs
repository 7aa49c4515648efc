use std::fmt;

/// Stable fault codes shared by the instrument server and its clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i32)]
pub enum FaultCode {
    WrongState = 100,
    UnknownVi = 101,
    UnknownVariable = 102,
    TypeMismatch = 103,
    NotWritable = 104,
    SessionBusy = 105,
    ValueOutOfRange = 106,
    Internal = 199,
}

impl FaultCode {
    pub const ALL: [FaultCode; 8] = [
        FaultCode::WrongState,
        FaultCode::UnknownVi,
        FaultCode::UnknownVariable,
        FaultCode::TypeMismatch,
        FaultCode::NotWritable,
        FaultCode::SessionBusy,
        FaultCode::ValueOutOfRange,
        FaultCode::Internal,
    ];

    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn from_code(code: i32) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultCode::WrongState => "WrongState",
            FaultCode::UnknownVi => "UnknownVI",
            FaultCode::UnknownVariable => "UnknownVariable",
            FaultCode::TypeMismatch => "TypeMismatch",
            FaultCode::NotWritable => "NotWritable",
            FaultCode::SessionBusy => "SessionBusy",
            FaultCode::ValueOutOfRange => "ValueOutOfRange",
            FaultCode::Internal => "Internal",
        }
    }
}

impl fmt::Display for FaultCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An XML-RPC fault: numeric code plus human-readable message.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("Fault {code}: {message}")]
pub struct Fault {
    pub code: i32,
    pub message: String,
}

impl Fault {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    /// Fault whose message is `<Name>: <detail>`.
    pub fn with_detail(kind: FaultCode, detail: impl fmt::Display) -> Self {
        Self::new(kind.code(), format!("{}: {detail}", kind.name()))
    }

    pub fn kind(&self) -> Option<FaultCode> {
        FaultCode::from_code(self.code)
    }

    pub fn is(&self, kind: FaultCode) -> bool {
        self.code == kind.code()
    }

    pub fn wrong_state(detail: impl fmt::Display) -> Self {
        Self::with_detail(FaultCode::WrongState, detail)
    }

    pub fn internal(detail: impl fmt::Display) -> Self {
        Self::with_detail(FaultCode::Internal, detail)
    }

    pub fn invalid_session() -> Self {
        Self::new(FaultCode::Internal.code(), "invalid session")
    }
}

impl From<FaultCode> for Fault {
    fn from(kind: FaultCode) -> Self {
        Self::new(kind.code(), kind.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_stable() {
        let expected = [
            (FaultCode::WrongState, 100),
            (FaultCode::UnknownVi, 101),
            (FaultCode::UnknownVariable, 102),
            (FaultCode::TypeMismatch, 103),
            (FaultCode::NotWritable, 104),
            (FaultCode::SessionBusy, 105),
            (FaultCode::ValueOutOfRange, 106),
            (FaultCode::Internal, 199),
        ];
        for (kind, code) in expected {
            assert_eq!(kind.code(), code);
            assert_eq!(FaultCode::from_code(code), Some(kind));
        }
        assert_eq!(FaultCode::from_code(107), None);
    }

    #[test]
    fn messages() {
        assert_eq!(Fault::from(FaultCode::UnknownVariable).message, "UnknownVariable");
        assert_eq!(
            Fault::with_detail(FaultCode::UnknownVariable, "pump_q").message,
            "UnknownVariable: pump_q"
        );
        assert_eq!(Fault::invalid_session(), Fault::new(199, "invalid session"));
    }
}
