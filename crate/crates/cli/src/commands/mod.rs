pub mod evaluate;
pub mod phantoms;
pub mod predict;
pub mod preview;
pub mod train;

use femseg::preprocess::{normalize_minmax, prepare_bilateral, PreprocessedCase};
use femseg::{LabelMask, Shape3, Volume};

use crate::error::{CliResult, Context};

/// Femur sides in the order they are processed and reported.
pub const SIDES: [&str; 2] = ["right", "left"];
pub const WHOLE: &str = "whole";

/// Network inputs for one scan, each tagged `right`/`left` or `whole`.
pub fn prepare(
    id: &str,
    v: &Volume,
    mask: Option<&LabelMask>,
    split: bool,
) -> CliResult<Vec<(&'static str, PreprocessedCase)>> {
    if split {
        let [r, l] = prepare_bilateral(v, mask).ingest(format!("case {id}"))?;
        Ok(vec![(SIDES[0], r), (SIDES[1], l)])
    } else {
        let n = normalize_minmax(v).ingest(format!("case {id}"))?;
        let c = PreprocessedCase::whole(n, mask.cloned()).ingest(format!("case {id}"))?;
        Ok(vec![(WHOLE, c)])
    }
}

/// The `x < W/2` and `x >= W/2` halves of a mask, unmirrored.
pub fn mask_halves(m: &LabelMask) -> femseg::Result<[LabelMask; 2]> {
    let s = m.shape();
    let half = s.w / 2;
    let cut = |x0: usize, w: usize| {
        let data = m.data().chunks_exact(s.w).flat_map(|row| row[x0..x0 + w].iter().copied()).collect();
        m.with_data(Shape3::new(s.d, s.h, w), data)
    };
    Ok([cut(0, half)?, cut(half, s.w - half)?])
}

pub fn row_id(case_id: &str, side: &str) -> String {
    if side == WHOLE {
        case_id.to_string()
    } else {
        format!("{case_id}_{side}")
    }
}
