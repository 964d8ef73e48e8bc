//! Finite-difference verification of every differentiable building block.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{
    batchnorm, conv2d, maxpool2x2, project_constrained, residual_block, srm_filter_bank, upsample2x, BnMode, ConvBn,
    LayerCtx, ResidualBlock, RunningStats,
};
use crate::tensor::{finite_diff_check, Backward, Result, Tensor};
use crate::training::{dice_loss, weighted_ce, DEFAULT_DICE_EPSILON};

/// Relative error at or above which a component fails.
pub const TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Conv,
    ConstrainedConv,
    Srm,
    BatchNorm,
    Relu,
    MaxPool,
    Upsample,
    ResidualBlock,
    SigmoidHead,
    Concat,
    DiceLoss,
    WeightedCe,
}

impl Component {
    pub const ALL: [Component; 12] = [
        Component::Conv,
        Component::ConstrainedConv,
        Component::Srm,
        Component::BatchNorm,
        Component::Relu,
        Component::MaxPool,
        Component::Upsample,
        Component::ResidualBlock,
        Component::SigmoidHead,
        Component::Concat,
        Component::DiceLoss,
        Component::WeightedCe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Conv => "conv",
            Component::ConstrainedConv => "constrained_conv",
            Component::Srm => "srm",
            Component::BatchNorm => "batchnorm",
            Component::Relu => "relu",
            Component::MaxPool => "maxpool",
            Component::Upsample => "upsample",
            Component::ResidualBlock => "residual_block",
            Component::SigmoidHead => "sigmoid_head",
            Component::Concat => "concat",
            Component::DiceLoss => "dice_loss",
            Component::WeightedCe => "weighted_ce",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub component: Component,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Identity whose backward scales the gradient, for negative controls.
struct Corrupt;

impl Backward<f64> for Corrupt {
    fn name(&self) -> &'static str {
        "corrupt"
    }

    fn backward(&self, _: &[Tensor<f64>], _: &Tensor<f64>, grad: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
        Ok(vec![Some(grad.iter().map(|g| g * 1.5).collect())])
    }
}

fn corrupt(t: Tensor<f64>) -> Result<Tensor<f64>> {
    Tensor::from_op(t.to_vec(), t.shape(), vec![t.clone()], Corrupt)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(lo..hi)).collect(), shape).expect("positive extents")
}

/// Values at least `gap` away from zero, so ReLU is probed off its kink.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(gap..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    Tensor::new(data, shape).expect("positive extents")
}

/// Distinct values spaced far beyond the probe step, so max-pool never ties.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(v, shape).expect("positive extents")
}

fn conv_bn_params(rng: &mut ChaCha8Rng, c: usize, id: usize) -> ConvBn<f64> {
    ConvBn {
        kernel: uniform(rng, &[3, 3, c, c], -0.4, 0.4),
        bias: Some(uniform(rng, &[c], -0.1, 0.1)),
        gamma: uniform(rng, &[c], 0.5, 1.5),
        beta: uniform(rng, &[c], -0.2, 0.2),
        running: RunningStats::new(c, 1e-5, 0.1),
        bn_id: id,
    }
}

/// Largest error over every listed input of one component. `build` maps the
/// full input list to the output, which is weighted by `weight` before the
/// sum reduction; each input is perturbed in turn.
fn check_inputs<F>(inputs: &[Tensor<f64>], weight: Option<&Tensor<f64>>, fault: bool, build: F) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut worst = 0.0f64;
    for i in 0..inputs.len() {
        let err = finite_diff_check(
            |x| {
                let mut all = inputs.to_vec();
                all[i] = x.clone();
                let mut y = build(&all)?;
                if fault {
                    y = corrupt(y)?;
                }
                match weight {
                    Some(w) => y.mul(w),
                    None => Ok(y),
                }
            },
            &inputs[i],
            EPS,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check(component: Component, rng: &mut ChaCha8Rng, fault: bool) -> Result<f64> {
    let img = [1, 4, 4, 2];
    match component {
        Component::Conv => {
            let ins = [uniform(rng, &img, -1.0, 1.0), uniform(rng, &[3, 3, 2, 3], -0.5, 0.5), uniform(rng, &[3], -0.5, 0.5)];
            let w = uniform(rng, &[1, 4, 4, 3], -1.0, 1.0);
            check_inputs(&ins, Some(&w), fault, |t| conv2d(&t[0], &t[1], Some(&t[2])))
        }
        Component::ConstrainedConv => {
            let mut k = uniform(rng, &[5, 5, 1, 2], -0.1, 0.1).to_vec();
            project_constrained(&mut k, [5, 5, 1, 2], rng)?;
            let ins = [uniform(rng, &[1, 6, 6, 1], 0.0, 1.0), Tensor::new(k, &[5, 5, 1, 2])?];
            let w = uniform(rng, &[1, 6, 6, 2], -1.0, 1.0);
            check_inputs(&ins, Some(&w), fault, |t| conv2d(&t[0], &t[1], None))
        }
        Component::Srm => {
            let (k, shape) = srm_filter_bank::<f64>(3);
            let bank = Tensor::new(k, &shape)?;
            let ins = [uniform(rng, &[1, 6, 6, 3], 0.0, 1.0)];
            let w = uniform(rng, &[1, 6, 6, 3], -1.0, 1.0);
            check_inputs(&ins, Some(&w), fault, |t| conv2d(&t[0], &bank, None))
        }
        Component::BatchNorm => {
            let ins = [uniform(rng, &[2, 3, 3, 2], -1.0, 1.0), uniform(rng, &[2], 0.5, 1.5), uniform(rng, &[2], -0.5, 0.5)];
            let w = uniform(rng, &[2, 3, 3, 2], -1.0, 1.0);
            let running = RunningStats { mean: vec![0.1, -0.2], var: vec![0.8, 1.3], eps: 1e-5, momentum: 0.1 };
            let train = check_inputs(&ins, Some(&w), fault, |t| Ok(batchnorm(&t[0], &t[1], &t[2], &running, BnMode::Train)?.0))?;
            let infer = check_inputs(&ins, Some(&w), fault, |t| Ok(batchnorm(&t[0], &t[1], &t[2], &running, BnMode::Infer)?.0))?;
            Ok(train.max(infer))
        }
        Component::Relu => {
            let ins = [off_kink(rng, &img, 1e-3)];
            let w = uniform(rng, &img, -1.0, 1.0);
            check_inputs(&ins, Some(&w), fault, |t| t[0].relu())
        }
        Component::MaxPool => {
            let ins = [distinct(rng, &img)];
            let w = uniform(rng, &[1, 2, 2, 2], -1.0, 1.0);
            check_inputs(&ins, Some(&w), fault, |t| maxpool2x2(&t[0]))
        }
        Component::Upsample => {
            let ins = [uniform(rng, &[1, 2, 2, 2], -1.0, 1.0)];
            let w = uniform(rng, &img, -1.0, 1.0);
            check_inputs(&ins, Some(&w), fault, |t| upsample2x(&t[0]))
        }
        Component::ResidualBlock => {
            let block = ResidualBlock { convs: [conv_bn_params(rng, 2, 0), conv_bn_params(rng, 2, 1), conv_bn_params(rng, 2, 2)] };
            let ins = [uniform(rng, &[2, 4, 4, 2], -1.0, 1.0)];
            let w = uniform(rng, &[2, 4, 4, 2], -1.0, 1.0);
            check_inputs(&ins, Some(&w), fault, |t| residual_block(&t[0], &block, &mut LayerCtx::new(BnMode::Train)))
        }
        Component::SigmoidHead => {
            let ins = [uniform(rng, &[1, 3, 3, 4], -1.0, 1.0), uniform(rng, &[1, 1, 4, 1], -1.0, 1.0), uniform(rng, &[1], -0.5, 0.5)];
            let w = uniform(rng, &[1, 3, 3, 1], -1.0, 1.0);
            check_inputs(&ins, Some(&w), fault, |t| conv2d(&t[0], &t[1], Some(&t[2]))?.sigmoid())
        }
        Component::Concat => {
            let ins = [uniform(rng, &[1, 2, 2, 2], -1.0, 1.0), uniform(rng, &[1, 2, 2, 3], -1.0, 1.0)];
            let w = uniform(rng, &[1, 2, 2, 5], -1.0, 1.0);
            check_inputs(&ins, Some(&w), fault, |t| Tensor::concat(&[&t[0], &t[1]], 3))
        }
        Component::DiceLoss | Component::WeightedCe => {
            let prob = uniform(rng, &[2, 3, 3, 1], 0.05, 0.95);
            let gt = Tensor::new((0..18).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect(), &[2, 3, 3, 1])?;
            if component == Component::DiceLoss {
                check_inputs(&[prob], None, fault, |t| dice_loss(&t[0], &gt, DEFAULT_DICE_EPSILON, false))
            } else {
                check_inputs(&[prob], None, fault, |t| weighted_ce(&t[0], &gt, [0.7, 2.3]))
            }
        }
    }
}

/// Checks every component in [`Component::ALL`] order. `fault` corrupts the
/// backward pass of one component.
pub fn run_suite(seed: u64, fault: Option<Component>) -> Result<Vec<CheckResult>> {
    Component::ALL
        .into_iter()
        .map(|component| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (component as u64) << 32);
            let max_rel_error = check(component, &mut rng, fault == Some(component))?;
            Ok(CheckResult { component, max_rel_error })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stock_layers_pass_and_each_is_listed_once() {
        let results = run_suite(0, None).unwrap();
        assert_eq!(results.len(), Component::ALL.len());
        for (r, c) in results.iter().zip(Component::ALL) {
            assert_eq!(r.component, c);
            assert!(r.passed(), "{}: {}", c, r.max_rel_error);
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        for c in [Component::Conv, Component::DiceLoss, Component::MaxPool] {
            let results = run_suite(1, Some(c)).unwrap();
            for r in &results {
                assert_eq!(r.passed(), r.component != c, "{}", r.component);
            }
        }
    }

    #[test]
    fn names_parse_back() {
        for c in Component::ALL {
            assert_eq!(Component::parse(c.name()), Some(c));
        }
        assert_eq!(Component::parse("softmax"), None);
    }
}
