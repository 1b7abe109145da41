//! Choosing which sealed segments a pass cleans.

use rand::seq::index;
use rand::Rng;

use crate::arbiter::Need;
use crate::error::{Error, Result};
use crate::log::{SegmentId, SegmentInfo};
use crate::types::AppId;

/// `sum(live bytes of app / need(app))` over the applications resident in a
/// segment: large when the segment holds much data of low-need applications.
pub fn segment_score(app_live: &[(AppId, usize)], need: impl Fn(AppId) -> Need) -> f64 {
    app_live
        .iter()
        .map(|&(app, bytes)| {
            let n = need(app).value();
            if n == 0.0 {
                f64::INFINITY
            } else {
                bytes as f64 / n
            }
        })
        .sum()
}

/// Picks up to `n` of `sealed`: `ceil(need_fraction * n)` by descending score
/// (ties to the lower segment id), the rest uniformly without replacement.
pub fn select_segments<R: Rng + ?Sized>(
    sealed: &[SegmentInfo],
    n: usize,
    need_fraction: f64,
    need: impl Fn(AppId) -> Need,
    rng: &mut R,
) -> Result<Vec<SegmentId>> {
    let minimum = n.clamp(1, 2);
    if sealed.len() < minimum {
        return Err(Error::NotEnoughSegments(sealed.len()));
    }
    let n = n.min(sealed.len());
    let by_score = ((need_fraction.clamp(0.0, 1.0) * n as f64).ceil() as usize).min(n);

    let mut scored: Vec<(f64, SegmentId)> = sealed
        .iter()
        .map(|s| (segment_score(&s.app_live, &need), s.id))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut chosen: Vec<SegmentId> = scored[..by_score].iter().map(|(_, id)| *id).collect();
    let rest: Vec<SegmentId> = scored[by_score..].iter().map(|(_, id)| *id).collect();
    let random = n - by_score;
    if random > 0 {
        chosen.extend(
            index::sample(rng, rest.len(), random)
                .into_iter()
                .map(|i| rest[i]),
        );
    }
    Ok(chosen)
}
