//! Shared fixtures for the integration tests and the acceptance suite.
#![allow(dead_code)]

use arflow::interpolant::FlowTime;
use arflow::model::{stack_tokens, ConditioningInput, ForwardOptions, ModelConfig, ModelParams, ModelVars};
use arflow::numcore::{concat_cols, concat_rows, gradcheck, RngState, Tape, Tensor, Var};
use arflow::sequence::LatentShape;
use arflow::Result;

pub type OpFn = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

/// Contracts `out` with fixed non-uniform weights so every output element
/// reaches the scalar with a distinct coefficient.
pub fn probe<'t>(tape: &'t Tape, out: Var<'t>) -> Result<Var<'t>> {
    let shape = out.shape();
    let n: usize = shape.iter().product();
    let w = Tensor::new(&shape, (0..n).map(|i| (0.37 * i as f64 + 0.1).sin() + 0.2).collect())?;
    out.mul(tape.constant(w))?.sum()
}

fn op<F>(f: F) -> OpFn
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + 'static,
{
    Box::new(f)
}

fn g(shape: &[usize], rng: &mut RngState) -> Tensor {
    Tensor::gaussian(shape, rng)
}

/// Every differentiable tape op with inputs in its smooth domain.
pub fn op_cases() -> Vec<(&'static str, Vec<Tensor>, OpFn)> {
    let mut r = RngState::new(2024);
    let pos = |s: &[usize], r: &mut RngState| Tensor::uniform(s, r).map(|u| 0.5 + u);
    macro_rules! case {
        ($name:expr, [$($input:expr),*], |$t:ident, $v:ident| $body:expr) => {
            ($name, vec![$($input),*], op(|$t, $v| {
                let out = $body?;
                probe($t, out)
            }))
        };
    }
    vec![
        case!("matmul", [g(&[3, 4], &mut r), g(&[4, 2], &mut r)], |t, v| v[0].matmul(v[1])),
        case!("matmul_nt", [g(&[3, 4], &mut r), g(&[5, 4], &mut r)], |t, v| v[0].matmul_nt(v[1])),
        case!("matmul_tn", [g(&[4, 3], &mut r), g(&[4, 2], &mut r)], |t, v| v[0].matmul_tn(v[1])),
        case!("transpose", [g(&[3, 4], &mut r)], |t, v| v[0].transpose()),
        case!("add", [g(&[3, 4], &mut r), g(&[3, 4], &mut r)], |t, v| v[0].add(v[1])),
        case!("sub", [g(&[3, 4], &mut r), g(&[3, 4], &mut r)], |t, v| v[0].sub(v[1])),
        case!("mul", [g(&[3, 4], &mut r), g(&[3, 4], &mut r)], |t, v| v[0].mul(v[1])),
        case!("add_row", [g(&[3, 4], &mut r), g(&[1, 4], &mut r)], |t, v| v[0].add_row(v[1])),
        case!("mul_row", [g(&[3, 4], &mut r), g(&[1, 4], &mut r)], |t, v| v[0].mul_row(v[1])),
        case!("scale_by", [g(&[3, 4], &mut r), g(&[1, 1], &mut r)], |t, v| v[0].scale_by(v[1])),
        case!("scale", [g(&[3, 4], &mut r)], |t, v| v[0].scale(-1.7)),
        case!("add_const", [g(&[3, 4], &mut r)], |t, v| v[0].add_const(0.3)?.mul(v[0])),
        case!("reshape", [g(&[3, 4], &mut r)], |t, v| v[0].reshape(&[2, 6])),
        case!("slice", [g(&[4, 5], &mut r)], |t, v| v[0].slice(1, 2, 2, 3)),
        case!("slice_rows", [g(&[4, 5], &mut r)], |t, v| v[0].slice_rows(1, 2)),
        case!("slice_cols", [g(&[4, 5], &mut r)], |t, v| v[0].slice_cols(3, 2)),
        case!("split_rows", [g(&[5, 3], &mut r)], |t, v| {
            let parts = v[0].split_rows(&[2, 3])?;
            parts[0].matmul_tn(parts[0])?.add(parts[1].matmul_tn(parts[1])?)
        }),
        case!("repeat_rows", [g(&[2, 3], &mut r)], |t, v| v[0].repeat_rows(3)),
        case!("gather_rows", [g(&[4, 3], &mut r)], |t, v| v[0].gather_rows(&[2, 0, 2, 3])),
        case!("sigmoid", [g(&[3, 4], &mut r)], |t, v| v[0].sigmoid()),
        case!("log_sigmoid", [g(&[3, 4], &mut r).scale(3.0)], |t, v| v[0].log_sigmoid()),
        case!("exp", [g(&[3, 4], &mut r)], |t, v| v[0].exp()),
        case!("log", [pos(&[3, 4], &mut r)], |t, v| v[0].log()),
        case!("silu", [g(&[3, 4], &mut r)], |t, v| v[0].silu()),
        case!("gelu", [g(&[3, 4], &mut r)], |t, v| v[0].gelu()),
        case!("softmax_rows", [g(&[3, 5], &mut r)], |t, v| v[0].softmax_rows(0.8)),
        case!("layer_norm", [g(&[3, 6], &mut r)], |t, v| v[0].layer_norm(1e-6)),
        case!("layer_norm_affine", [g(&[3, 6], &mut r), g(&[1, 6], &mut r), g(&[1, 6], &mut r)], |t, v| v[0]
            .layer_norm_affine(v[1], v[2], 1e-6)),
        case!("linear", [g(&[3, 4], &mut r), g(&[4, 2], &mut r), g(&[1, 2], &mut r)], |t, v| v[0].linear(v[1], v[2])),
        case!("sum", [g(&[3, 4], &mut r)], |t, v| v[0].mul(v[0])?.sum()),
        case!("mean", [g(&[3, 4], &mut r)], |t, v| v[0].mul(v[0])?.mean()),
        case!("mean_rows", [g(&[3, 4], &mut r)], |t, v| v[0].mean_rows()),
        case!("concat_rows", [g(&[2, 3], &mut r), g(&[1, 3], &mut r)], |t, v| concat_rows(&[v[0], v[1], v[0]])),
        case!("concat_cols", [g(&[2, 3], &mut r), g(&[2, 1], &mut r)], |t, v| concat_cols(&[v[1], v[0]])),
    ]
}

/// Tiny model used by the full-model gradient check.
pub fn grad_model_config() -> ModelConfig {
    ModelConfig {
        latent_shape: LatentShape::new(1, 2, 4),
        patch_size: 2,
        hidden_size: 8,
        depth: 1,
        num_heads: 2,
        num_classes: 2,
        mlp_ratio: 2,
        time_freq_dim: 4,
        seq_len_train: 2,
        ..ModelConfig::default()
    }
}

/// Central-difference check of the two-chunk velocity loss with respect to
/// every model parameter; returns the largest relative error.
pub fn model_gradcheck() -> Result<gradcheck::GradCheckReport> {
    let cfg = grad_model_config();
    let mut rng = RngState::new(77);
    let params = ModelParams::init(cfg, &mut rng)?.perturbed(0.3, &mut rng);
    let chunks: Vec<Tensor> = (0..2).map(|_| Tensor::gaussian(&cfg.latent_shape.dims(), &mut rng)).collect();
    let targets: Vec<Tensor> = (0..2).map(|_| Tensor::gaussian(&cfg.latent_shape.dims(), &mut rng)).collect();
    let cond = ConditioningInput::new(vec![FlowTime::new(0.8)?, FlowTime::new(0.3)?], 1);
    let tokens = stack_tokens(&cfg, &chunks.iter().collect::<Vec<_>>())?;
    let target = stack_tokens(&cfg, &targets.iter().collect::<Vec<_>>())?;
    gradcheck::check(params.tensors(), 1e-5, 1e-6, |tape, vars| {
        let mv = ModelVars::from_vars(tape, cfg, vars.to_vec())?;
        let out = mv.forward_tokens(
            tape.constant(tokens.clone()),
            std::slice::from_ref(&cond),
            &ForwardOptions::default(),
            None,
        )?;
        let d = out.velocity.sub(tape.constant(target.clone()))?;
        d.mul(d)?.mean()
    })
}
