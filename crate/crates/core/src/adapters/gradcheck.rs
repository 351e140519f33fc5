//! Finite-difference verification of the hand-written block gradients.

use serde::{Deserialize, Serialize};

use super::block::{block_output, toy_block_gradients, BlockInputs, Modulation, QuadraticProbe};
use super::{AdapterState, Backbone, ParamGroup, ToyBlockConfig};
use crate::error::Result;
use crate::tensor::{finite_diff_partials, Tensor};

pub const GRAD_CHECK_STEP: f64 = 1e-6;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
/// Coordinates probed per group, evenly strided over the flattened group.
pub const GRAD_CHECK_SAMPLES: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    /// Parameter group name, or `"input"` for the token gradient.
    pub group: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub probe_value: f64,
    pub step: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupError>,
    pub passed: bool,
}

impl GradReport {
    pub fn failures(&self) -> Vec<&str> {
        self.groups.iter().filter(|g| !g.passed).map(|g| g.group.as_str()).collect()
    }
}

fn strided(len: usize, samples: usize) -> Vec<usize> {
    if len <= samples {
        return (0..len).collect();
    }
    (0..samples).map(|i| i * (len - 1) / (samples - 1)).collect()
}

fn group_error(name: String, analytic: &[f64], numeric: &[f64]) -> GroupError {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let err = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, f)| m.max((a - f).abs())) / scale;
    GroupError {
        group: name,
        checked: numeric.len(),
        max_rel_err: err,
        passed: err <= GRAD_CHECK_TOLERANCE,
    }
}

fn group_name(g: ParamGroup) -> String {
    serde_json::to_value(g)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_else(|| format!("{g:?}"))
}

/// Compares analytic gradients of `probe` through one block against central
/// differences, per parameter group and for the input tokens. Runs
/// single-threaded and is deterministic.
#[allow(clippy::too_many_arguments)]
pub fn grad_check_adapters(
    cfg: &ToyBlockConfig,
    z: &Tensor,
    inputs: &BlockInputs,
    state: &AdapterState,
    bb: &Backbone,
    modulation: Modulation,
    probe: &QuadraticProbe,
) -> Result<GradReport> {
    let (value, grads, dz) = toy_block_gradients(cfg, z, inputs, state, bb, modulation, probe)?;
    let loss = |s: &AdapterState, z: &Tensor| -> f64 {
        match block_output(cfg, z, inputs, s, bb, modulation) {
            Ok(out) => probe.value(&out),
            Err(_) => f64::NAN,
        }
    };
    let mut groups = Vec::with_capacity(ParamGroup::ALL.len() + 1);
    for g in ParamGroup::ALL {
        let theta = Tensor::from_vec(state.group(g));
        let idx = strided(theta.len(), GRAD_CHECK_SAMPLES);
        let numeric = finite_diff_partials(
            |th| {
                let mut s = state.clone();
                for &i in &idx {
                    let _ = s.set_group_entry(g, i, th.data()[i]);
                }
                loss(&s, z)
            },
            &theta,
            GRAD_CHECK_STEP,
            &idx,
        )?;
        let all = grads.group(g);
        let analytic: Vec<f64> = idx.iter().map(|&i| all[i]).collect();
        groups.push(group_error(group_name(g), &analytic, &numeric));
    }
    let idx = strided(z.len(), GRAD_CHECK_SAMPLES);
    let numeric = finite_diff_partials(|zz| loss(state, zz), z, GRAD_CHECK_STEP, &idx)?;
    let analytic: Vec<f64> = idx.iter().map(|&i| dz.data()[i]).collect();
    groups.push(group_error("input".into(), &analytic, &numeric));
    let passed = groups.iter().all(|g| g.passed);
    Ok(GradReport {
        probe_value: value,
        step: GRAD_CHECK_STEP,
        tolerance: GRAD_CHECK_TOLERANCE,
        groups,
        passed,
    })
}
