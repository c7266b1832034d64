use std::str::FromStr;

/// Operator counts: `7`, `3..32` (inclusive), `3..=32`, or `3,10,20,32`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NRange(pub Vec<usize>);

impl FromStr for NRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("not a count: {t:?}"));
        let values: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
            let (lo, hi) = (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?);
            if lo > hi {
                return Err(format!("empty range {s}"));
            }
            (lo..=hi).collect()
        } else {
            s.split(',').map(num).collect::<Result<_, _>>()?
        };
        if values.iter().any(|&n| n < 2) {
            return Err("every n must be at least 2".to_owned());
        }
        Ok(Self(values))
    }
}

impl NRange {
    pub fn single(&self) -> Option<usize> {
        match self.0.as_slice() {
            [n] => Some(*n),
            _ => None,
        }
    }
}
