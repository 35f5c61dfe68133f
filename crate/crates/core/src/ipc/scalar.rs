use bytes::Bytes;

use super::IpcError;
use crate::wire::DecodeError;

/// Element type of an [`Array`](super::Array).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ScalarTag {
    Int64 = 1,
    Float64 = 2,
    Bool = 3,
    Char = 4,
}

impl TryFrom<u8> for ScalarTag {
    type Error = DecodeError;

    fn try_from(b: u8) -> Result<Self, DecodeError> {
        match b {
            1 => Ok(ScalarTag::Int64),
            2 => Ok(ScalarTag::Float64),
            3 => Ok(ScalarTag::Bool),
            4 => Ok(ScalarTag::Char),
            _ => Err(DecodeError::Invalid("scalar tag")),
        }
    }
}

/// A fixed-width value: one tag byte then a little-endian payload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    Int64(i64),
    Float64(f64),
    Bool(bool),
    Char(char),
}

impl Scalar {
    pub fn tag(&self) -> ScalarTag {
        match self {
            Scalar::Int64(_) => ScalarTag::Int64,
            Scalar::Float64(_) => ScalarTag::Float64,
            Scalar::Bool(_) => ScalarTag::Bool,
            Scalar::Char(_) => ScalarTag::Char,
        }
    }

    pub fn zero(tag: ScalarTag) -> Scalar {
        match tag {
            ScalarTag::Int64 => Scalar::Int64(0),
            ScalarTag::Float64 => Scalar::Float64(0.0),
            ScalarTag::Bool => Scalar::Bool(false),
            ScalarTag::Char => Scalar::Char('\0'),
        }
    }

    pub fn encode(&self) -> Bytes {
        let mut out = Vec::with_capacity(9);
        out.push(self.tag() as u8);
        match self {
            Scalar::Int64(v) => out.extend_from_slice(&v.to_le_bytes()),
            Scalar::Float64(v) => out.extend_from_slice(&v.to_le_bytes()),
            Scalar::Bool(v) => out.push(*v as u8),
            Scalar::Char(c) => out.extend_from_slice(&(*c as u32).to_le_bytes()),
        }
        Bytes::from(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Scalar, DecodeError> {
        let (&tag, payload) = bytes.split_first().ok_or(DecodeError::Truncated)?;
        let tag = ScalarTag::try_from(tag)?;
        let fixed8 = || -> Result<[u8; 8], DecodeError> { payload.try_into().map_err(|_| DecodeError::Invalid("scalar width")) };
        Ok(match tag {
            ScalarTag::Int64 => Scalar::Int64(i64::from_le_bytes(fixed8()?)),
            ScalarTag::Float64 => Scalar::Float64(f64::from_le_bytes(fixed8()?)),
            ScalarTag::Bool => match payload {
                [0] => Scalar::Bool(false),
                [1] => Scalar::Bool(true),
                _ => return Err(DecodeError::Invalid("bool scalar")),
            },
            ScalarTag::Char => {
                let raw: [u8; 4] = payload.try_into().map_err(|_| DecodeError::Invalid("scalar width"))?;
                Scalar::Char(char::from_u32(u32::from_le_bytes(raw)).ok_or(DecodeError::Invalid("char scalar"))?)
            }
        })
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Scalar::Int64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Float64(v) => Some(*v),
            _ => None,
        }
    }

    pub(crate) fn expect_tag(&self, tag: ScalarTag) -> Result<(), IpcError> {
        if self.tag() == tag {
            Ok(())
        } else {
            Err(IpcError::TypeMismatch { expected: tag, got: self.tag() })
        }
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int64(v)
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Float64(v)
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

impl From<char> for Scalar {
    fn from(v: char) -> Self {
        Scalar::Char(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn any_scalar() -> impl Strategy<Value = Scalar> {
        prop_oneof![
            any::<i64>().prop_map(Scalar::Int64),
            any::<f64>().prop_filter("nan", |f| !f.is_nan()).prop_map(Scalar::Float64),
            any::<bool>().prop_map(Scalar::Bool),
            any::<char>().prop_map(Scalar::Char),
        ]
    }

    proptest! {
        #[test]
        fn codec_round_trip(s in any_scalar()) {
            let enc = s.encode();
            prop_assert!(enc.len() <= 16);
            prop_assert_eq!(Scalar::decode(&enc).unwrap(), s);
        }
    }

    #[test]
    fn layout_is_tag_then_le() {
        assert_eq!(&Scalar::Int64(1).encode()[..], &[1, 1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&Scalar::Bool(true).encode()[..], &[3, 1]);
        assert_eq!(&Scalar::Char('A').encode()[..], &[4, 65, 0, 0, 0]);
        assert!(Scalar::decode(&[1, 0]).is_err());
        assert!(Scalar::decode(&[9, 0]).is_err());
    }
}
