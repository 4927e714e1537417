use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::io::StepRecord;
use crate::sim::{Pose, Trajectory};

/// Assumed stride length.
pub const PDR_STEP_M: f64 = 0.67;

/// Dead reckoning from step events: each step advances [`PDR_STEP_M`] along
/// its heading. Returns the start pose followed by one pose per step.
pub fn pdr(start: &Pose, step_times: &[f64], headings: &[f64]) -> Result<Trajectory> {
    if step_times.len() != headings.len() {
        return Err(Error::StreamMismatch(format!(
            "{} step times but {} headings",
            step_times.len(),
            headings.len()
        )));
    }
    let mut poses = Vec::with_capacity(step_times.len() + 1);
    let mut p = start.position();
    poses.push(*start);
    for (&t, &h) in step_times.iter().zip(headings) {
        p += Point2::new(h.cos(), h.sin()) * PDR_STEP_M;
        poses.push(Pose::new(t, p.x, p.y, h));
    }
    Ok(Trajectory { poses })
}

/// PDR position at each of `times`: the start plus all steps at or before it.
pub fn pdr_at_times(start: &Pose, steps: &[StepRecord], times: &[f64]) -> Result<Trajectory> {
    let t: Vec<f64> = steps.iter().map(|s| s.t).collect();
    let h: Vec<f64> = steps.iter().map(|s| s.heading).collect();
    let raw = pdr(start, &t, &h)?;
    let mut k = 0;
    let poses = times
        .iter()
        .map(|&ti| {
            while k < steps.len() && steps[k].t <= ti + 1e-9 {
                k += 1;
            }
            let p = raw.poses[k];
            Pose::new(ti, p.x, p.y, p.theta)
        })
        .collect();
    Ok(Trajectory { poses })
}
