//! Central finite-difference verification of tape gradients.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamTree, Tape, Tensor, Var};

/// Denominator floor of the relative error, so near-zero gradients are
/// compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("finite-difference eps {eps} outside [1e-6, 1e-3]")));
    }
    Ok(())
}

/// Build `f` on fresh tapes with `inputs` as leaves and return the maximum
/// relative error between backward and central differences over every coordinate.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_eps(eps)?;
    let eval = |vals: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let (tape, vars, out) = eval(inputs)?;
    let grads = tape.backward(out)?;
    let mut worst = 0.0f64;
    let mut vals = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].rows(), inputs[i].cols()));
        for c in 0..inputs[i].len() {
            let orig = vals[i].data()[c];
            vals[i].data_mut()[c] = orig + eps;
            let (tp, _, op) = eval(&vals)?;
            let up = tp.value(op).scalar();
            vals[i].data_mut()[c] = orig - eps;
            let (tm, _, om) = eval(&vals)?;
            let down = tm.value(om).scalar();
            vals[i].data_mut()[c] = orig;
            worst = worst.max(rel_error(analytic.data()[c], (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

/// Gradient check of a loss over a parameter tree. `f` receives a tape with
/// the tree bound and returns the scalar loss.
pub fn finite_diff_check<F>(f: F, params: &ParamTree<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParamTree<f64>, &crate::numerics::Bound) -> Result<Var>,
{
    check_eps(eps)?;
    let scalar_loss = |tree: &ParamTree<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = tree.bind(&mut tape);
        let out = f(&mut tape, tree, &bound)?;
        Ok(tape.value(out).scalar())
    };
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = f(&mut tape, params, &bound)?;
    let mut g = tape.backward(out)?;
    let analytic = params.collect_grads(&bound, &mut g);
    let mut tree = params.clone();
    let mut worst = 0.0f64;
    for (i, grad) in analytic.iter().enumerate() {
        for c in 0..grad.len() {
            let orig = tree.leaves()[i].tensor.data()[c];
            tree.leaves_mut()[i].tensor.data_mut()[c] = orig + eps;
            let up = scalar_loss(&tree)?;
            tree.leaves_mut()[i].tensor.data_mut()[c] = orig - eps;
            let down = scalar_loss(&tree)?;
            tree.leaves_mut()[i].tensor.data_mut()[c] = orig;
            worst = worst.max(rel_error(grad.data()[c], (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

/// Uniform entries in `[-scale, scale]`.
pub fn random_tensor<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..=scale)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eps_range_enforced() {
        let inputs = vec![Tensor::filled(1, 1, 1.0)];
        let f = |t: &mut Tape<f64>, v: &[Var]| Ok(t.sum(v[0]));
        assert!(check_gradients(&inputs, 1e-2, f).is_err());
        assert!(check_gradients(&inputs, 1e-5, f).unwrap() < 1e-8);
    }

    #[test]
    fn detects_wrong_gradient() {
        // A constant path hides the dependence from backward, so the check must fail.
        let inputs = vec![Tensor::filled(1, 1, 2.0)];
        let err = check_gradients(&inputs, 1e-5, |t, v| {
            let c = t.constant(t.value(v[0]).clone());
            let y = t.mul(c, v[0])?;
            Ok(t.sum(y))
        })
        .unwrap();
        assert!(err > 0.1);
    }
}
