use super::{expect_rank4, LayerCache};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Window edge and stride of every pooling layer.
pub const POOL_SIZE: usize = 2;

/// 2x2 stride-2 max pooling. Trailing odd rows/columns are dropped.
///
/// Ties go to the first maximal element in row-major window order.
pub fn maxpool_forward(x: &Tensor, cache: &mut LayerCache) -> Result<Tensor> {
    let (b, c, h, w) = expect_rank4(x, "maxpool")?;
    if h < POOL_SIZE || w < POOL_SIZE {
        return Err(Error::Shape(format!("maxpool needs H,W >= 2, got {h}x{w}")));
    }
    let (oh, ow) = (h / POOL_SIZE, w / POOL_SIZE);
    let xd = x.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * POOL_SIZE * w + ox * POOL_SIZE;
                for dy in 0..POOL_SIZE {
                    for dx in 0..POOL_SIZE {
                        let i = base + (oy * POOL_SIZE + dy) * w + ox * POOL_SIZE + dx;
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    cache.input_shape = x.shape().to_vec();
    cache.argmax = argmax;
    Tensor::from_vec(&[b, c, oh, ow], out)
}

/// Routes each upstream gradient to the input position that won its window.
pub fn maxpool_backward(grad_out: &Tensor, cache: &LayerCache) -> Result<Tensor> {
    let shape = cache.input_shape();
    let expected = match *shape {
        [b, c, h, w] => [b, c, h / POOL_SIZE, w / POOL_SIZE],
        _ => return Err(Error::Shape("maxpool backward called without a forward cache".into())),
    };
    if grad_out.shape() != expected || cache.argmax.len() != grad_out.len() {
        return Err(Error::Shape(format!(
            "maxpool grad_out {:?} does not match forward output {expected:?}",
            grad_out.shape()
        )));
    }
    let mut grad_x = Tensor::zeros(shape)?;
    let gx = grad_x.data_mut();
    for (&src, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gx[src] += g;
    }
    Ok(grad_x)
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::*;
    use super::*;

    #[test]
    fn figure_shape() {
        let x = Tensor::zeros(&[1, 64, 72, 72]).unwrap();
        let y = maxpool_forward(&x, &mut LayerCache::new()).unwrap();
        assert_eq!(y.shape(), &[1, 64, 36, 36]);
    }

    #[test]
    fn odd_extent_floors() {
        let x = Tensor::zeros(&[1, 1, 37, 37]).unwrap();
        let y = maxpool_forward(&x, &mut LayerCache::new()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 18, 18]);
    }

    #[test]
    fn window_max_and_routing() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut cache = LayerCache::new();
        let y = maxpool_forward(&x, &mut cache).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = Tensor::from_vec(&[1, 1, 1, 1], vec![2.5]).unwrap();
        let gx = maxpool_backward(&g, &cache).unwrap();
        assert_eq!(gx.data(), &[0.0, 0.0, 0.0, 2.5]);
    }

    #[test]
    fn ties_route_to_first_element() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        let mut cache = LayerCache::new();
        maxpool_forward(&x, &mut cache).unwrap();
        let gx = maxpool_backward(&Tensor::full(&[1, 1, 1, 1], 1.0).unwrap(), &cache).unwrap();
        assert_eq!(gx.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn too_small_input() {
        let x = Tensor::zeros(&[1, 1, 1, 4]).unwrap();
        assert!(matches!(maxpool_forward(&x, &mut LayerCache::new()), Err(Error::Shape(_))));
    }

    #[test]
    fn finite_differences_and_mass_conservation() {
        // Distinct values keep every window's maximum away from a tie.
        let n = 2 * 3 * 5 * 6;
        let vals: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64 * 0.1).collect();
        let x = Tensor::from_vec(&[2, 3, 5, 6], vals).unwrap();
        let mut cache = LayerCache::new();
        maxpool_forward(&x, &mut cache).unwrap();
        let r = random(&[2, 3, 2, 3], 9);
        let gx = maxpool_backward(&r, &cache).unwrap();
        let num = numeric_grad(&x, 1e-5, |xp| {
            dot(&maxpool_forward(xp, &mut LayerCache::new()).unwrap(), &r)
        });
        assert!(rel_error(gx.data(), &num) <= 1e-5);
        assert!((gx.sum() - r.sum()).abs() < 1e-12);
    }
}
