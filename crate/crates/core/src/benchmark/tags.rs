use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Challenge attributes, plus the two imaging-quality flags, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChallengeTag {
    /// Big salient object.
    Bso,
    /// Center bias.
    Cb,
    /// Cross image boundary.
    Cib,
    /// Image clutter.
    Ic,
    /// Low illumination.
    Li,
    /// Multiple salient objects.
    Mso,
    /// Out of focus.
    Of,
    /// Small salient object.
    Sso,
    /// Similar appearance.
    Sa,
    /// Thermal crossover.
    Tc,
    /// Bad weather.
    Bw,
    /// Low-quality RGB image.
    Rgb,
    /// Low-quality thermal image.
    T,
}

pub const TAG_COUNT: usize = 13;

impl ChallengeTag {
    pub const ALL: [ChallengeTag; TAG_COUNT] = [
        ChallengeTag::Bso,
        ChallengeTag::Cb,
        ChallengeTag::Cib,
        ChallengeTag::Ic,
        ChallengeTag::Li,
        ChallengeTag::Mso,
        ChallengeTag::Of,
        ChallengeTag::Sso,
        ChallengeTag::Sa,
        ChallengeTag::Tc,
        ChallengeTag::Bw,
        ChallengeTag::Rgb,
        ChallengeTag::T,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ChallengeTag::Bso => "BSO",
            ChallengeTag::Cb => "CB",
            ChallengeTag::Cib => "CIB",
            ChallengeTag::Ic => "IC",
            ChallengeTag::Li => "LI",
            ChallengeTag::Mso => "MSO",
            ChallengeTag::Of => "OF",
            ChallengeTag::Sso => "SSO",
            ChallengeTag::Sa => "SA",
            ChallengeTag::Tc => "TC",
            ChallengeTag::Bw => "BW",
            ChallengeTag::Rgb => "RGB",
            ChallengeTag::T => "T",
        }
    }

    /// Position in [`ChallengeTag::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ChallengeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnknownTag(pub String);

impl fmt::Display for UnknownTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown challenge tag {:?}", self.0)
    }
}

impl std::error::Error for UnknownTag {}

impl FromStr for ChallengeTag {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChallengeTag::ALL
            .into_iter()
            .find(|t| t.code() == s)
            .ok_or_else(|| UnknownTag(s.to_string()))
    }
}

impl Serialize for ChallengeTag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for ChallengeTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip_in_order() {
        assert_eq!(ChallengeTag::ALL.len(), 13);
        for (i, t) in ChallengeTag::ALL.into_iter().enumerate() {
            assert_eq!(t.index(), i);
            assert_eq!(t.code().parse::<ChallengeTag>().unwrap(), t);
        }
        assert!("bso".parse::<ChallengeTag>().is_err());
        assert_eq!(serde_json::to_string(&ChallengeTag::Tc).unwrap(), "\"TC\"");
    }
}
