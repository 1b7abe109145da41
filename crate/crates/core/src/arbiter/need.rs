use std::cmp::Ordering;
use std::fmt;

/// `targetMem / actualMem` for one application.
///
/// An application holding no bytes while owed some has maximal need, which
/// orders above every finite value. Zero target and zero actual is 1.0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Need(f64);

impl Need {
    pub const MAX: Need = Need(f64::INFINITY);
    pub const SATISFIED: Need = Need(1.0);

    pub fn compute(target: u64, actual: u64) -> Need {
        match (target, actual) {
            (0, 0) => Need::SATISFIED,
            (_, 0) => Need::MAX,
            (t, a) => Need(t as f64 / a as f64),
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_max(self) -> bool {
        self.0.is_infinite()
    }
}

impl Eq for Need {}

impl PartialOrd for Need {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Need {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Need {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_max() {
            f.write_str("max")
        } else {
            write!(f, "{:.4}", self.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIB: u64 = 1 << 20;

    #[test]
    fn ratio() {
        assert_eq!(Need::compute(10 * MIB, 5 * MIB).value(), 2.0);
        assert_eq!(Need::compute(7 * MIB, 7 * MIB).value(), 1.0);
        assert_eq!(Need::compute(0, 0), Need::SATISFIED);
    }

    #[test]
    fn empty_app_has_max_need() {
        let n = Need::compute(MIB, 0);
        assert!(n.is_max());
        assert!(n > Need::compute(u64::MAX, 1));
        assert_eq!(n, Need::MAX);
    }
}
