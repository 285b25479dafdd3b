use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// One of the two camera views.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum View {
    A,
    B,
}

impl View {
    pub const BOTH: [View; 2] = [View::A, View::B];

    pub fn index(self) -> usize {
        match self {
            View::A => 0,
            View::B => 1,
        }
    }

    pub fn other(self) -> View {
        match self {
            View::A => View::B,
            View::B => View::A,
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::A => "A",
            View::B => "B",
        })
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" | "0" => Ok(View::A),
            "B" | "b" | "1" => Ok(View::B),
            other => Err(Error::Usage(format!(
                "unknown camera view '{other}' (expected A or B)"
            ))),
        }
    }
}
