use super::LayerCache;
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Tensor};

/// Weights `[out_units, in_units]` and bias `[out_units]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        match (weights.shape(), bias.shape()) {
            (&[o, _], &[ob]) if o == ob => Ok(DenseParams { weights, bias }),
            (w, b) => Err(Error::Shape(format!(
                "dense params need weights [O,I] and bias [O], got {w:?} and {b:?}"
            ))),
        }
    }

    pub fn in_units(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_units(&self) -> usize {
        self.weights.shape()[0]
    }
}

fn check_input(x: &Tensor, p: &DenseParams) -> Result<usize> {
    match *x.shape() {
        [b, k] if k == p.in_units() => Ok(b),
        _ => Err(Error::Shape(format!(
            "dense layer expects [B,{}], got {:?}",
            p.in_units(),
            x.shape()
        ))),
    }
}

/// `y = x W^T + b`.
pub fn dense_forward(x: &Tensor, p: &DenseParams, cache: &mut LayerCache) -> Result<Tensor> {
    let b = check_input(x, p)?;
    let (k, n) = (p.in_units(), p.out_units());
    let mut out = vec![0.0; b * n];
    gemm(
        b,
        k,
        n,
        MatRef::row_major(x.data(), k),
        MatRef::transposed(p.weights.data(), k),
        &mut out,
        false,
    );
    for row in out.chunks_mut(n) {
        row.iter_mut().zip(p.bias.data()).for_each(|(v, bias)| *v += bias);
    }
    cache.input = Some(x.clone());
    cache.input_shape = x.shape().to_vec();
    Tensor::from_vec(&[b, n], out)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn dense_backward(
    grad_out: &Tensor,
    cache: &LayerCache,
    p: &DenseParams,
) -> Result<(Tensor, Tensor, Tensor)> {
    let x = cache
        .input
        .as_ref()
        .ok_or_else(|| Error::Shape("dense backward called without a forward cache".into()))?;
    let b = check_input(x, p)?;
    let (k, n) = (p.in_units(), p.out_units());
    if grad_out.shape() != [b, n] {
        return Err(Error::Shape(format!(
            "dense grad_out {:?} does not match forward output {:?}",
            grad_out.shape(),
            [b, n]
        )));
    }
    let g = grad_out.data();

    let mut grad_w = vec![0.0; n * k];
    gemm(n, b, k, MatRef::transposed(g, n), MatRef::row_major(x.data(), k), &mut grad_w, false);

    let mut grad_x = vec![0.0; b * k];
    gemm(b, n, k, MatRef::row_major(g, n), MatRef::row_major(p.weights.data(), k), &mut grad_x, false);

    let mut grad_b = vec![0.0; n];
    for row in g.chunks(n) {
        grad_b.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
    }
    Ok((
        Tensor::from_vec(&[b, k], grad_x)?,
        Tensor::from_vec(&[n, k], grad_w)?,
        Tensor::from_vec(&[n], grad_b)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::*;
    use super::*;

    #[test]
    fn identity_and_bias_only() {
        let x = random(&[2, 4], 1);
        let p = DenseParams::new(Tensor::identity(4).unwrap(), Tensor::zeros(&[4]).unwrap()).unwrap();
        assert_eq!(dense_forward(&x, &p, &mut LayerCache::new()).unwrap(), x);

        let bias = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let p = DenseParams::new(random(&[3, 4], 2), bias).unwrap();
        let y = dense_forward(&Tensor::zeros(&[2, 4]).unwrap(), &p, &mut LayerCache::new()).unwrap();
        assert_eq!(y.data(), &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);
    }

    #[test]
    fn mismatched_input() {
        let p = DenseParams::new(random(&[3, 4], 2), Tensor::zeros(&[3]).unwrap()).unwrap();
        let x = Tensor::zeros(&[2, 5]).unwrap();
        assert!(matches!(dense_forward(&x, &p, &mut LayerCache::new()), Err(Error::Shape(_))));
    }

    #[test]
    fn finite_differences() {
        let x = random(&[2, 4], 21);
        let p = DenseParams::new(random(&[3, 4], 22), random(&[3], 23)).unwrap();
        let r = random(&[2, 3], 24);
        let mut cache = LayerCache::new();
        dense_forward(&x, &p, &mut cache).unwrap();
        let (gx, gw, gb) = dense_backward(&r, &cache, &p).unwrap();
        let f = |xp: &Tensor, q: &DenseParams| dot(&dense_forward(xp, q, &mut LayerCache::new()).unwrap(), &r);
        assert!(rel_error(gx.data(), &numeric_grad(&x, 1e-5, |xp| f(xp, &p))) <= 1e-6);
        let nw = numeric_grad(&p.weights, 1e-5, |w| f(&x, &DenseParams::new(w.clone(), p.bias.clone()).unwrap()));
        assert!(rel_error(gw.data(), &nw) <= 1e-6);
        let nb = numeric_grad(&p.bias, 1e-5, |b| f(&x, &DenseParams::new(p.weights.clone(), b.clone()).unwrap()));
        assert!(rel_error(gb.data(), &nb) <= 1e-6);
    }
}
