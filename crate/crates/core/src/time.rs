//! Timestamps, frequencies and the `[rfc3339, value]` data point encoding.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, FixedOffset, SecondsFormat, Utc};
use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Timestamp = DateTime<Utc>;

/// Formats a timestamp in the `2019-03-01T00:00:00+00:00` form.
pub fn format_ts(ts: &Timestamp) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, false)
}

/// Parses an RFC 3339 timestamp with any offset and normalizes it to UTC.
pub fn parse_ts(text: &str) -> Result<Timestamp> {
    DateTime::<FixedOffset>::parse_from_rfc3339(text.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::MalformedConfig {
            path: "timestamp".into(),
            message: format!("`{text}`: {e}"),
        })
}

/// serde adapter writing timestamps with [`format_ts`].
pub mod rfc3339 {
    use super::*;

    pub fn serialize<S: Serializer>(ts: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_ts(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let text = String::deserialize(d)?;
        parse_ts(&text).map_err(de::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(ts: &Option<Timestamp>, s: S) -> Result<S::Ok, S::Error> {
            match ts {
                Some(ts) => s.serialize_some(&format_ts(ts)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<Option<Timestamp>, D::Error> {
            Option::<String>::deserialize(d)?
                .map(|text| parse_ts(&text).map_err(de::Error::custom))
                .transpose()
        }
    }
}

/// A single observation. Encoded on the wire as `[rfc3339, value]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataPoint {
    pub timestamp: Timestamp,
    pub value: f64,
}

impl DataPoint {
    pub fn new(timestamp: Timestamp, value: f64) -> Self {
        Self { timestamp, value }
    }
}

impl Serialize for DataPoint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut tup = s.serialize_tuple(2)?;
        tup.serialize_element(&format_ts(&self.timestamp))?;
        tup.serialize_element(&self.value)?;
        tup.end()
    }
}

impl<'de> Deserialize<'de> for DataPoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct PointVisitor;

        impl<'de> Visitor<'de> for PointVisitor {
            type Value = DataPoint;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a [rfc3339, number] pair")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<DataPoint, A::Error> {
                let ts: String = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let value: f64 = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(1, &self))?;
                if seq.next_element::<de::IgnoredAny>()?.is_some() {
                    return Err(de::Error::invalid_length(3, &self));
                }
                let timestamp = parse_ts(&ts).map_err(de::Error::custom)?;
                Ok(DataPoint { timestamp, value })
            }
        }

        d.deserialize_tuple(2, PointVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrequencyUnit {
    Minute,
    Hour,
    Day,
}

/// A regular sampling step written as `<N>T`, `<N>H` or `<N>D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrequencySpec {
    pub count: u32,
    pub unit: FrequencyUnit,
}

impl FrequencySpec {
    pub fn minutes(count: u32) -> Self {
        Self {
            count,
            unit: FrequencyUnit::Minute,
        }
    }

    pub fn hours(count: u32) -> Self {
        Self {
            count,
            unit: FrequencyUnit::Hour,
        }
    }

    pub fn days(count: u32) -> Self {
        Self {
            count,
            unit: FrequencyUnit::Day,
        }
    }

    pub fn duration(&self) -> Duration {
        let n = i64::from(self.count);
        match self.unit {
            FrequencyUnit::Minute => Duration::minutes(n),
            FrequencyUnit::Hour => Duration::hours(n),
            FrequencyUnit::Day => Duration::days(n),
        }
    }

    /// Start of the bucket containing `ts`. The grid is anchored at the
    /// Unix epoch, which is a UTC midnight.
    pub fn bucket_start(&self, ts: Timestamp) -> Timestamp {
        bucket_floor(ts, self.duration())
    }
}

pub(crate) fn bucket_floor(ts: Timestamp, step: Duration) -> Timestamp {
    let step_us = step.num_microseconds().expect("bucket step fits in i64 micros");
    let us = ts.timestamp_micros();
    let floored = us.div_euclid(step_us) * step_us;
    DateTime::from_timestamp_micros(floored).expect("floored timestamp in range")
}

impl FromStr for FrequencySpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let invalid = || Error::InvalidFrequency(text.to_string());
        let trimmed = text.trim();
        let (digits, unit) = trimmed.split_at(trimmed.len().saturating_sub(1));
        let unit = match unit {
            "T" => FrequencyUnit::Minute,
            "H" => FrequencyUnit::Hour,
            "D" => FrequencyUnit::Day,
            _ => return Err(invalid()),
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(invalid());
        }
        let count: u32 = digits.parse().map_err(|_| invalid())?;
        if count == 0 {
            return Err(invalid());
        }
        Ok(Self { count, unit })
    }
}

impl fmt::Display for FrequencySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let unit = match self.unit {
            FrequencyUnit::Minute => 'T',
            FrequencyUnit::Hour => 'H',
            FrequencyUnit::Day => 'D',
        };
        write!(f, "{}{}", self.count, unit)
    }
}

impl Serialize for FrequencySpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FrequencySpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(de::Error::custom)
    }
}

/// Renders a duration in the most compact frequency notation, e.g. `90T`, `24H`.
pub fn format_duration(d: Duration) -> String {
    let minutes = d.num_minutes();
    if d != Duration::minutes(minutes) {
        return format!("{}s", d.num_seconds());
    }
    if minutes % (24 * 60) == 0 {
        format!("{}D", minutes / (24 * 60))
    } else if minutes % 60 == 0 {
        format!("{}H", minutes / 60)
    } else {
        format!("{minutes}T")
    }
}
