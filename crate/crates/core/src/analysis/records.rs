use std::fmt;
use std::str::FromStr;

use super::rank::{Dependence, IndependenceCheck};

/// FNV-1a over the bit patterns of `z`; identifies a probe point in reports.
pub fn z_hash(z: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in z {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// One line of a rank / irreducibility report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeRecord {
    pub z_hash: u64,
    pub slot: usize,
    pub sizes: (usize, usize),
    /// `(union, first, second)`
    pub ranks: (usize, usize, usize),
    pub verdict: Dependence,
}

impl ProbeRecord {
    pub fn new(z: &[f64], slot: usize, sizes: (usize, usize), check: &IndependenceCheck) -> Self {
        ProbeRecord {
            z_hash: z_hash(z),
            slot,
            sizes,
            ranks: (check.rank_union, check.rank_first, check.rank_second),
            verdict: check.verdict,
        }
    }
}

impl fmt::Display for ProbeRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = match self.verdict {
            Dependence::Independent => "independent",
            Dependence::Dependent => "dependent",
        };
        write!(
            f,
            "z={:016x} slot={} sizes={}/{} ranks={}/{}/{} verdict={}",
            self.z_hash, self.slot, self.sizes.0, self.sizes.1, self.ranks.0, self.ranks.1, self.ranks.2, verdict
        )
    }
}

impl FromStr for ProbeRecord {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let mut fields = std::collections::HashMap::new();
        for token in line.split_whitespace() {
            let (k, v) = token.split_once('=').ok_or_else(|| format!("malformed field {token:?}"))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| format!("missing field {k}"));
        let parse = |s: &str| s.parse::<usize>().map_err(|e| e.to_string());
        let pair = |s: &str| -> Result<Vec<usize>, String> { s.split('/').map(parse).collect() };
        let sizes = pair(get("sizes")?)?;
        let ranks = pair(get("ranks")?)?;
        if sizes.len() != 2 || ranks.len() != 3 {
            return Err("sizes needs 2 values and ranks 3".into());
        }
        Ok(ProbeRecord {
            z_hash: u64::from_str_radix(get("z")?, 16).map_err(|e| e.to_string())?,
            slot: parse(get("slot")?)?,
            sizes: (sizes[0], sizes[1]),
            ranks: (ranks[0], ranks[1], ranks[2]),
            verdict: match get("verdict")? {
                "independent" => Dependence::Independent,
                "dependent" => Dependence::Dependent,
                other => return Err(format!("unknown verdict {other}")),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn record_lines_round_trip(h in any::<u64>(), slot in 0usize..10, a in 1usize..30, b in 1usize..30, r in 0usize..4, dep in any::<bool>()) {
            let record = ProbeRecord {
                z_hash: h,
                slot,
                sizes: (a, b),
                ranks: (r, r.min(a), r.min(b)),
                verdict: if dep { Dependence::Dependent } else { Dependence::Independent },
            };
            prop_assert_eq!(record.to_string().parse::<ProbeRecord>().unwrap(), record);
        }
    }

    #[test]
    fn hash_distinguishes_points() {
        assert_eq!(z_hash(&[1.0, 2.0]), z_hash(&[1.0, 2.0]));
        assert_ne!(z_hash(&[1.0, 2.0]), z_hash(&[2.0, 1.0]));
    }
}
