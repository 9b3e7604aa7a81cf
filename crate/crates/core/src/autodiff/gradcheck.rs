use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Gradients below this magnitude are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, RELATIVE_FLOOR)`.
    pub max_rel_error: f64,
    /// `(input, element)` where the largest error occurred.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Fixed projection weights used to reduce a non-scalar output to a scalar.
fn projection(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 + 0.5 * ((i + 1) as f64).sin()).collect()
}

fn scalarize(tape: &mut Tape, out: Var) -> Result<Var> {
    let n = tape.value(out).len();
    if n == 1 {
        return Ok(out);
    }
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(Tensor::from_parts(shape, projection(n)));
    let weighted = tape.mul(out, w)?;
    Ok(tape.sum_all(weighted))
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let loss = scalarize(&mut tape, out)?;
    Ok(tape.value(loss).data()[0])
}

/// Compares tape gradients of `f` with central differences
/// `(f(x + h) - f(x - h)) / 2h` for every element of every input.
/// Non-scalar outputs are reduced with a fixed weighted sum first.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let loss = scalarize(&mut tape, out)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
        tol,
    };
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        for e in 0..inputs[i].len() {
            let x0 = inputs[i].data()[e];
            probe[i].data_mut()[e] = x0 + step;
            let plus = evaluate(&f, &probe)?;
            probe[i].data_mut()[e] = x0 - step;
            let minus = evaluate(&f, &probe)?;
            probe[i].data_mut()[e] = x0;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic.data()[e], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (i, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step, tol)
}

type Primitive = (&'static str, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>, Vec<Tensor>);

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=4)
}

/// One randomly shaped instance of every primitive for `seed`.
fn primitive_cases(seed: u64) -> Vec<Primitive> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, m, k, n) = (dim(&mut rng), dim(&mut rng), dim(&mut rng), dim(&mut rng));
    let mut r = |shape: &[usize]| Tensor::randn(shape, 1.0, &mut rng);
    let softmax_axis = (seed % 3) as usize;
    let sum_axis = (seed % 2) as usize;
    let rows: Vec<usize> = (0..5).map(|i| (i * 7 + seed as usize) % m).collect();
    let positive = Tensor::from_parts(
        vec![m, n],
        r(&[m, n]).data().iter().map(|x| 0.5 + x.abs()).collect(),
    );
    vec![
        ("matmul", Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1])), vec![r(&[m, k]), r(&[k, n])]),
        ("matmul_batched", Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1])), vec![r(&[b, m, k]), r(&[b, k, n])]),
        ("matmul_shared", Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1])), vec![r(&[b, m, k]), r(&[k, n])]),
        ("add", Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1])), vec![r(&[m, n]), r(&[m, n])]),
        ("add_broadcast", Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1])), vec![r(&[b, m, n]), r(&[n])]),
        ("sub", Box::new(|t: &mut Tape, v: &[Var]| t.sub(v[0], v[1])), vec![r(&[b, n]), r(&[n])]),
        ("mul", Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1])), vec![r(&[m, n]), r(&[m, n])]),
        ("mul_broadcast", Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1])), vec![r(&[b, m, n]), r(&[m, n])]),
        ("scale", Box::new(|t: &mut Tape, v: &[Var]| Ok(t.scale(v[0], -1.7))), vec![r(&[m, n])]),
        ("concat", Box::new(|t: &mut Tape, v: &[Var]| t.concat(&[v[0], v[1]], 1)), vec![r(&[b, m, n]), r(&[b, k, n])]),
        ("slice", Box::new(move |t: &mut Tape, v: &[Var]| t.slice(v[0], 1, k / 2, k - k / 2)), vec![r(&[m, k, n])]),
        ("reshape", Box::new(move |t: &mut Tape, v: &[Var]| t.reshape(v[0], &[n, m * k])), vec![r(&[m, k, n])]),
        ("transpose", Box::new(|t: &mut Tape, v: &[Var]| t.transpose(v[0], 0, 2)), vec![r(&[b, m, k, n])]),
        ("softmax", Box::new(move |t: &mut Tape, v: &[Var]| t.softmax(v[0], softmax_axis)), vec![r(&[b + 1, m + 1, n + 1])]),
        ("layer_norm", Box::new(|t: &mut Tape, v: &[Var]| Ok(t.layer_norm(v[0], 1e-5))), vec![r(&[m, n + 1])]),
        ("gelu", Box::new(|t: &mut Tape, v: &[Var]| Ok(t.gelu(v[0]))), vec![r(&[m, n])]),
        (
            "dropout",
            Box::new(move |t: &mut Tape, v: &[Var]| {
                let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
                t.dropout(v[0], 0.3, Some(&mut mask_rng))
            }),
            vec![r(&[m, n])],
        ),
        ("mean_all", Box::new(|t: &mut Tape, v: &[Var]| Ok(t.mean_all(v[0]))), vec![r(&[m, n])]),
        ("sum_all", Box::new(|t: &mut Tape, v: &[Var]| Ok(t.sum_all(v[0]))), vec![r(&[m, n])]),
        ("sum_axis", Box::new(move |t: &mut Tape, v: &[Var]| t.sum_axis(v[0], sum_axis)), vec![r(&[m, n])]),
        ("sqrt", Box::new(|t: &mut Tape, v: &[Var]| t.sqrt(v[0])), vec![positive]),
        ("gather_rows", Box::new(move |t: &mut Tape, v: &[Var]| t.gather_rows(v[0], &rows)), vec![r(&[m, n])]),
        (
            "linear",
            Box::new(|t: &mut Tape, v: &[Var]| t.linear(v[0], v[1], Some(v[2]))),
            vec![r(&[b, m, k]), r(&[k, n]), r(&[n])],
        ),
    ]
}

/// Runs [`grad_check_many`] on every primitive with shapes drawn from `seed`.
pub fn check_primitives(seed: u64, step: f64, tol: f64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    primitive_cases(seed)
        .into_iter()
        .map(|(name, f, inputs)| Ok((name, grad_check_many(f, &inputs, step, tol)?)))
        .collect()
}
