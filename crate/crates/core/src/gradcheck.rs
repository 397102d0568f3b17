//! Finite-difference verification of the analytic gradients.
//!
//! Every parameter (and every input value) of a network is perturbed by
//! `±step`; the central difference of the summed cross-entropy is compared
//! against the value produced by the backward pass.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::exec::Execution;
use crate::grid::{LabelGrid, SequenceND, Shape};
use crate::layer::GroupId;
use crate::lstm::LstmLayerConfig;
use crate::network::{
    backward_from_logit_deltas, network_backward_with, network_forward_with, LayerConfig,
    LayerKind, Network, NetworkConfig,
};
use crate::tanh::TanhLayerConfig;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;
/// Gradient magnitudes below this are compared on an absolute scale.
pub const SCALE_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

fn cross_entropy(net: &Network, input: &SequenceND, targets: &LabelGrid) -> Result<f64> {
    let fwd = network_forward_with(net, input, Execution::Sequential)?;
    let k = net.config().output_width;
    Ok(targets
        .labels()
        .iter()
        .enumerate()
        .map(|(p, &t)| {
            let o = &fwd.logits.values()[p * k..(p + 1) * k];
            let max = o.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + o.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - o[t]
        })
        .sum())
}

#[derive(Clone, Debug)]
pub struct GroupReport {
    /// `None` for the input-gradient row.
    pub group: Option<GroupId>,
    pub entries: usize,
    pub max_relative_error: f64,
}

#[derive(Clone, Debug)]
pub struct CaseReport {
    pub name: String,
    pub groups: Vec<GroupReport>,
}

impl CaseReport {
    pub fn max_relative_error(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() < TOLERANCE
    }
}

impl fmt::Display for CaseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}  max {:.3e}  {}",
            self.name,
            self.max_relative_error(),
            if self.passed() { "ok" } else { "FAIL" }
        )?;
        for g in &self.groups {
            let name = g.group.map_or("input".to_string(), |id| id.to_string());
            writeln!(
                f,
                "  {name:<22}{:>6}  {:.3e}",
                g.entries, g.max_relative_error
            )?;
        }
        Ok(())
    }
}

/// Compares every parameter and input gradient of `net` on one labelled
/// sequence. With `corrupt` set, the analytic gradient of the first
/// parameter is deliberately offset so the check must fail.
pub fn check_network(
    name: &str,
    net: &Network,
    input: &SequenceND,
    targets: &LabelGrid,
    exec: Execution,
    corrupt: bool,
) -> Result<CaseReport> {
    let fwd = network_forward_with(net, input, exec)?;
    let mut analytic = network_backward_with(net, input, &fwd, targets, exec)?.gradients;
    if corrupt {
        if let Some((_, g)) = analytic
            .groups_mut()
            .into_iter()
            .find(|(_, g)| !g.is_empty())
        {
            g[0] += 1e-3;
        }
    }

    // (group index, entry index) for every scalar parameter
    let index: Vec<(usize, usize)> = net
        .params()
        .groups()
        .iter()
        .enumerate()
        .flat_map(|(gi, (_, v))| (0..v.len()).map(move |k| (gi, k)))
        .collect();
    let numeric: Vec<Result<f64>> = exec.map(index.len(), |i| {
        let (gi, k) = index[i];
        let mut plus = net.clone();
        plus.params_mut().groups_mut()[gi].1[k] += STEP;
        let mut minus = net.clone();
        minus.params_mut().groups_mut()[gi].1[k] -= STEP;
        Ok(
            (cross_entropy(&plus, input, targets)? - cross_entropy(&minus, input, targets)?)
                / (2.0 * STEP),
        )
    });

    let analytic_groups = analytic.groups();
    let mut groups: Vec<GroupReport> = analytic_groups
        .iter()
        .map(|(id, v)| GroupReport {
            group: Some(*id),
            entries: v.len(),
            max_relative_error: 0.0,
        })
        .collect();
    for (&(gi, k), n) in index.iter().zip(numeric) {
        let e = relative_error(analytic_groups[gi].1[k], n?);
        groups[gi].max_relative_error = groups[gi].max_relative_error.max(e);
    }

    // input gradient: seed the logits with the cross-entropy deltas
    let kk = net.config().output_width;
    let mut deltas = fwd.probabilities.values().to_vec();
    for (p, &t) in targets.labels().iter().enumerate() {
        deltas[p * kk + t] -= 1.0;
    }
    let deltas = SequenceND::new(input.shape().clone(), kk, deltas)?;
    let (_, input_grad) = backward_from_logit_deltas(net, input, &fwd, &deltas, exec)?;
    let numeric_input: Vec<Result<f64>> = exec.map(input.values().len(), |k| {
        let mut xp = input.clone();
        xp.values_mut()[k] += STEP;
        let mut xm = input.clone();
        xm.values_mut()[k] -= STEP;
        Ok((cross_entropy(net, &xp, targets)? - cross_entropy(net, &xm, targets)?) / (2.0 * STEP))
    });
    let mut worst_input: f64 = 0.0;
    for (k, n) in numeric_input.into_iter().enumerate() {
        worst_input = worst_input.max(relative_error(input_grad.values()[k], n?));
    }
    groups.push(GroupReport {
        group: None,
        entries: input.values().len(),
        max_relative_error: worst_input,
    });

    Ok(CaseReport {
        name: name.to_string(),
        groups,
    })
}

/// One configuration of the standard suite.
#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub kind: LayerKind,
    pub dims: Vec<usize>,
    pub multidirectional: bool,
}

impl SuiteCase {
    pub fn name(&self) -> String {
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        format!(
            "{} n={} {} shape=({})",
            self.kind,
            self.dims.len(),
            if self.multidirectional {
                "multi"
            } else {
                "single"
            },
            dims.join(",")
        )
    }

    fn network_config(&self, input_width: usize, classes: usize) -> NetworkConfig {
        let n = self.dims.len();
        let layer = match self.kind {
            LayerKind::Tanh => LayerConfig::Tanh(TanhLayerConfig {
                num_dims: n,
                input_width,
                hidden_width: 3,
            }),
            LayerKind::Lstm => LayerConfig::Lstm(LstmLayerConfig::new(n, input_width, 2)),
        };
        NetworkConfig {
            layer,
            output_width: classes,
            multidirectional: self.multidirectional,
        }
    }
}

/// Both layer kinds, n = 1, 2, 3, single- and multi-directional.
/// `larger` grows the grids (slower, same coverage).
pub fn standard_suite(larger: bool) -> Vec<SuiteCase> {
    let shapes: [Vec<usize>; 3] = if larger {
        [vec![8], vec![4, 4], vec![3, 2, 2]]
    } else {
        [vec![5], vec![3, 3], vec![2, 2, 2]]
    };
    let mut out = Vec::new();
    for kind in [LayerKind::Tanh, LayerKind::Lstm] {
        for dims in &shapes {
            for multidirectional in [false, true] {
                out.push(SuiteCase {
                    kind,
                    dims: dims.clone(),
                    multidirectional,
                });
            }
        }
    }
    out
}

/// Builds a random network and labelled input for `case` and checks it.
pub fn run_case(case: &SuiteCase, seed: u64, exec: Execution, corrupt: bool) -> Result<CaseReport> {
    let (input_width, classes) = (2, 3);
    let cfg = case.network_config(input_width, classes);
    let net = Network::random(cfg, seed, 0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let shape = Shape::new(&case.dims)?;
    let values = (0..shape.point_count() * input_width)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let input = SequenceND::new(shape.clone(), input_width, values)?;
    let labels = (0..shape.point_count())
        .map(|_| rng.gen_range(0..classes))
        .collect();
    let targets = LabelGrid::new(shape, classes, labels)?;
    check_network(&case.name(), &net, &input, &targets, exec, corrupt)
}

pub fn run_suite(
    seed: u64,
    larger: bool,
    exec: Execution,
    corrupt: bool,
) -> Result<Vec<CaseReport>> {
    standard_suite(larger)
        .iter()
        .enumerate()
        .map(|(i, case)| run_case(case, seed.wrapping_add(i as u64 * 1000), exec, corrupt))
        .collect()
}
