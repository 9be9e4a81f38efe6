use std::fmt;

/// Value representations this crate stores. Anything else read from an
/// explicit-VR stream is kept as [`Vr::UN`] with its bytes untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Vr {
    AE,
    AS,
    CS,
    DA,
    DS,
    DT,
    IS,
    LO,
    LT,
    PN,
    SH,
    ST,
    TM,
    UI,
    UL,
    US,
    SS,
    SL,
    FL,
    FD,
    OB,
    OW,
    SQ,
    UN,
}

impl Vr {
    pub const ALL: [Vr; 24] = [
        Vr::AE,
        Vr::AS,
        Vr::CS,
        Vr::DA,
        Vr::DS,
        Vr::DT,
        Vr::IS,
        Vr::LO,
        Vr::LT,
        Vr::PN,
        Vr::SH,
        Vr::ST,
        Vr::TM,
        Vr::UI,
        Vr::UL,
        Vr::US,
        Vr::SS,
        Vr::SL,
        Vr::FL,
        Vr::FD,
        Vr::OB,
        Vr::OW,
        Vr::SQ,
        Vr::UN,
    ];

    pub fn code(self) -> [u8; 2] {
        let s = match self {
            Vr::AE => b"AE",
            Vr::AS => b"AS",
            Vr::CS => b"CS",
            Vr::DA => b"DA",
            Vr::DS => b"DS",
            Vr::DT => b"DT",
            Vr::IS => b"IS",
            Vr::LO => b"LO",
            Vr::LT => b"LT",
            Vr::PN => b"PN",
            Vr::SH => b"SH",
            Vr::ST => b"ST",
            Vr::TM => b"TM",
            Vr::UI => b"UI",
            Vr::UL => b"UL",
            Vr::US => b"US",
            Vr::SS => b"SS",
            Vr::SL => b"SL",
            Vr::FL => b"FL",
            Vr::FD => b"FD",
            Vr::OB => b"OB",
            Vr::OW => b"OW",
            Vr::SQ => b"SQ",
            Vr::UN => b"UN",
        };
        *s
    }

    pub fn as_str(self) -> &'static str {
        const NAMES: [&str; 24] = [
            "AE", "AS", "CS", "DA", "DS", "DT", "IS", "LO", "LT", "PN", "SH", "ST", "TM", "UI",
            "UL", "US", "SS", "SL", "FL", "FD", "OB", "OW", "SQ", "UN",
        ];
        NAMES[self as usize]
    }

    pub fn from_code(code: [u8; 2]) -> Option<Vr> {
        Vr::ALL.into_iter().find(|v| v.code() == code)
    }

    /// Explicit-VR encoding uses a reserved u16 plus a u32 length for these.
    pub fn has_long_length(self) -> bool {
        matches!(self, Vr::OB | Vr::OW | Vr::SQ | Vr::UN)
    }

    pub fn is_text(self) -> bool {
        matches!(
            self,
            Vr::AE
                | Vr::AS
                | Vr::CS
                | Vr::DA
                | Vr::DS
                | Vr::DT
                | Vr::IS
                | Vr::LO
                | Vr::LT
                | Vr::PN
                | Vr::SH
                | Vr::ST
                | Vr::TM
                | Vr::UI
        )
    }

    /// Byte appended to odd-length values.
    pub fn padding(self) -> u8 {
        if self.is_text() && self != Vr::UI {
            b' '
        } else {
            0
        }
    }

    /// Largest value length the encoding can express.
    pub fn max_length(self) -> usize {
        if self.has_long_length() {
            0xFFFF_FFFE
        } else {
            0xFFFF
        }
    }
}

/// Explicit-VR codes outside [`Vr`] that still use the long length form.
pub(crate) fn foreign_code_has_long_length(code: [u8; 2]) -> bool {
    matches!(
        &code,
        b"OD" | b"OF" | b"OL" | b"OV" | b"SV" | b"UC" | b"UR" | b"UT" | b"UV"
    )
}

impl fmt::Display for Vr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_roundtrip() {
        for vr in Vr::ALL {
            assert_eq!(Vr::from_code(vr.code()), Some(vr));
            assert_eq!(vr.as_str().as_bytes(), &vr.code());
        }
        assert_eq!(Vr::from_code(*b"UT"), None);
    }

    #[test]
    fn padding_rules() {
        assert_eq!(Vr::PN.padding(), b' ');
        assert_eq!(Vr::UI.padding(), 0);
        assert_eq!(Vr::OB.padding(), 0);
    }
}
