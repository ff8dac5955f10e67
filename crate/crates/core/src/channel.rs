//! Sensor channels and forecast horizons.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the four measured quantities forecast and checked per station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Air,
    Road,
    Underground,
    Humidity,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::Air,
        Channel::Road,
        Channel::Underground,
        Channel::Humidity,
    ];

    pub fn index(self) -> usize {
        match self {
            Channel::Air => 0,
            Channel::Road => 1,
            Channel::Underground => 2,
            Channel::Humidity => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Air => "air",
            Channel::Road => "road",
            Channel::Underground => "underground",
            Channel::Humidity => "humidity",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} `{value}`")]
pub struct UnknownName {
    pub kind: &'static str,
    pub value: String,
}

impl FromStr for Channel {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| UnknownName {
                kind: "channel",
                value: s.to_string(),
            })
    }
}

/// Forecast lead time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Horizon {
    #[serde(rename = "1h")]
    H1,
    #[serde(rename = "2h")]
    H2,
    #[serde(rename = "3h")]
    H3,
}

impl Horizon {
    pub const ALL: [Horizon; 3] = [Horizon::H1, Horizon::H2, Horizon::H3];

    pub fn hours(self) -> u32 {
        match self {
            Horizon::H1 => 1,
            Horizon::H2 => 2,
            Horizon::H3 => 3,
        }
    }

    pub fn index(self) -> usize {
        self.hours() as usize - 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Horizon::H1 => "1h",
            Horizon::H2 => "2h",
            Horizon::H3 => "3h",
        }
    }

    pub fn from_hours(h: u32) -> Option<Horizon> {
        match h {
            1 => Some(Horizon::H1),
            2 => Some(Horizon::H2),
            3 => Some(Horizon::H3),
            _ => None,
        }
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Horizon {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.strip_suffix('h').unwrap_or(s);
        trimmed
            .parse::<u32>()
            .ok()
            .and_then(Horizon::from_hours)
            .ok_or_else(|| UnknownName {
                kind: "horizon",
                value: s.to_string(),
            })
    }
}

/// One value per channel, indexed by [`Channel`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelValues(pub [f64; 4]);

impl ChannelValues {
    pub fn get(&self, channel: Channel) -> f64 {
        self.0[channel.index()]
    }

    pub fn set(&mut self, channel: Channel, value: f64) {
        self.0[channel.index()] = value;
    }
}

impl std::ops::Index<Channel> for ChannelValues {
    type Output = f64;

    fn index(&self, channel: Channel) -> &f64 {
        &self.0[channel.index()]
    }
}

impl std::ops::IndexMut<Channel> for ChannelValues {
    fn index_mut(&mut self, channel: Channel) -> &mut f64 {
        &mut self.0[channel.index()]
    }
}
