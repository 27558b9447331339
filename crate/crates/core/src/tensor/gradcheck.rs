//! Central finite-difference gradient checking.

use serde::Serialize;

use super::{ParamId, ParamStore, Result, Tape, TensorError, Var};

/// Step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error: components whose analytic and
/// numeric gradients are both below this magnitude are compared absolutely
/// against it.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub size: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() <= tol
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of `loss_fn` against central differences for
/// every scalar of every parameter in `store` (or only `only`, if given).
///
/// `loss_fn` must be deterministic and return a `1×1` node.
pub fn check_gradients<F>(store: &mut ParamStore, only: Option<&[ParamId]>, loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    check_gradients_with(store, only, loss_fn)
}

/// [`check_gradients`] for loss functions with their own error type.
pub fn check_gradients_with<F, E>(
    store: &mut ParamStore,
    only: Option<&[ParamId]>,
    mut loss_fn: F,
) -> std::result::Result<GradCheckReport, E>
where
    F: FnMut(&ParamStore, &mut Tape) -> std::result::Result<Var, E>,
    E: From<TensorError>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    tape.backward(loss)?.accumulate_into(store);

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };

    let mut eval = |store: &ParamStore| -> std::result::Result<f64, E> {
        let mut t = Tape::new();
        let l = loss_fn(store, &mut t)?;
        Ok(t.scalar(l))
    };

    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).len();
        let analytic: Vec<f64> = store
            .get(id)
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; n]);
        let mut worst = ParamCheck {
            name: store.name(id).to_string(),
            size: n,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..n {
            let orig = store.get(id).values()[i];
            store.get_mut(id).values_mut()[i] = orig + FD_STEP;
            let plus = eval(store)?;
            store.get_mut(id).values_mut()[i] = orig - FD_STEP;
            let minus = eval(store)?;
            store.get_mut(id).values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = rel_error(analytic[i], numeric);
            if err > worst.max_rel_error || i == 0 {
                worst.max_rel_error = err;
                worst.worst_index = i;
                worst.analytic = analytic[i];
                worst.numeric = numeric;
            }
        }
        params.push(worst);
    }
    store.zero_grad();
    Ok(GradCheckReport { params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamGroup, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    const TOL: f64 = 1e-4;

    #[test]
    fn matmul_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let a = s.add("a", random(&mut rng, 3, 4), ParamGroup::Graph).unwrap();
        let b = s.add("b", random(&mut rng, 4, 2), ParamGroup::Graph).unwrap();
        let w = random(&mut rng, 3, 2);
        let rep = check_gradients(&mut s, None, |s, t| {
            let a = t.param(s, a);
            let b = t.param(s, b);
            let w = t.leaf(&w);
            let p = t.matmul(a, b)?;
            let p = t.mul(p, w)?;
            Ok(t.sum(p))
        })
        .unwrap();
        assert!(rep.passes(TOL), "{rep:?}");
    }

    #[test]
    fn layer_norm_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::new();
        let x = s.add("x", random(&mut rng, 4, 8), ParamGroup::Graph).unwrap();
        let g = s.add("g", random(&mut rng, 1, 8), ParamGroup::Graph).unwrap();
        let b = s.add("b", random(&mut rng, 1, 8), ParamGroup::Graph).unwrap();
        let w = random(&mut rng, 4, 8);
        let rep = check_gradients(&mut s, None, |s, t| {
            let (x, g, b) = (t.param(s, x), t.param(s, g), t.param(s, b));
            let y = t.layer_norm(x, g, b, 1e-5)?;
            let w = t.leaf(&w);
            let y = t.mul(y, w)?;
            Ok(t.sum(y))
        })
        .unwrap();
        assert!(rep.passes(TOL), "{rep:?}");
    }

    #[test]
    fn mul_gradient_is_other_operand() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let a = s.add("a", random(&mut rng, 2, 3), ParamGroup::Graph).unwrap();
        let bt = random(&mut rng, 2, 3);
        s.zero_grad();
        let mut t = Tape::new();
        let av = t.param(&s, a);
        let bv = t.leaf(&bt);
        let p = t.mul(av, bv).unwrap();
        let l = t.sum(p);
        t.backward(l).unwrap().accumulate_into(&mut s);
        assert_eq!(s.get(a).grad.as_deref().unwrap(), bt.values());
        let rep = check_gradients(&mut s, None, |s, t| {
            let av = t.param(s, a);
            let bv = t.leaf(&bt);
            let p = t.mul(av, bv)?;
            Ok(t.sum(p))
        })
        .unwrap();
        assert!(rep.passes(TOL));
    }

    /// Every remaining op, on random shapes up to 8×8.
    #[test]
    fn all_ops_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..12 {
            let r = rng.gen_range(1..=8);
            let c = rng.gen_range(1..=8);
            let mut s = ParamStore::new();
            let x = s.add("x", random(&mut rng, r, c), ParamGroup::Graph).unwrap();
            let y = s.add("y", random(&mut rng, r, c), ParamGroup::Graph).unwrap();
            let col = s.add("col", random(&mut rng, r, 1), ParamGroup::Graph).unwrap();
            let row = s.add("row", random(&mut rng, 1, c), ParamGroup::Graph).unwrap();
            let weights = random(&mut rng, r, c);
            let rows: Vec<usize> = (0..r + 2).map(|_| rng.gen_range(0..r)).collect();
            let segs: Vec<usize> = (0..r * c).map(|_| rng.gen_range(0..3)).collect();
            let mask: Vec<bool> = (0..r * c).map(|i| i % 3 == 1 && c > 1).collect();
            let rep = check_gradients(&mut s, None, |s, t| {
                let (x, y, col, row) = (t.param(s, x), t.param(s, y), t.param(s, col), t.param(s, row));
                let w = t.leaf(&weights);
                let a = t.sub(x, y)?;
                let a = t.gelu(a);
                let b = t.scale_rows(a, col)?;
                let b = t.scale_cols(b, row)?;
                let b = t.add_row(b, row)?;
                let sm0 = t.softmax(b, 0)?;
                let sm1 = t.log_softmax(x, 1)?;
                let masked = t.mask_fill(y, &mask)?;
                let sm2 = t.softmax(masked, 1)?;
                let seg = t.segment_softmax(b, &segs)?;
                let tr = t.transpose(sm0);
                let tr = t.transpose(tr);
                let prod = t.mul(tr, w)?;
                let acc = t.add(prod, sm1)?;
                let acc = t.add(acc, sm2)?;
                let acc = t.add(acc, seg)?;
                let acc = t.mul(acc, w)?;
                let picked = t.index_rows(acc, &rows)?;
                let back = t.scatter_add_rows(picked, &rows, r)?;
                let cat = t.concat(&[back, x], 1)?;
                let cat = t.concat(&[cat, cat], 0)?;
                let sl = t.slice(cat, 1, 1.min(c), c)?;
                let sl = t.slice(sl, 0, 0, r)?;
                let rs = t.row_sum(sl);
                let rs = t.mul(rs, col)?;
                let l = t.sum(rs);
                Ok(t.scale(l, 0.5))
            })
            .unwrap();
            assert!(rep.passes(TOL), "trial {trial}: {rep:?}");
        }
    }

    #[test]
    fn gather_gradient_accumulates_repeated_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ParamStore::new();
        let table = s.add("emb", random(&mut rng, 6, 3), ParamGroup::Encoder).unwrap();
        let w = random(&mut rng, 4, 3);
        let rep = check_gradients(&mut s, None, |s, t| {
            let g = t.gather(s, table, &[1, 4, 1, 0])?;
            let w = t.leaf(&w);
            let p = t.mul(g, w)?;
            let p = t.mul(p, g)?;
            Ok(t.sum(p))
        })
        .unwrap();
        assert!(rep.passes(TOL), "{rep:?}");
    }
}
