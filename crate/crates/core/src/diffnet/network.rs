use super::params::KERNEL;
use super::{Gradients, ModelParams, Real};
use crate::data::ImageTensor;
use crate::error::{Error, Result};

/// Activations of one convolution block kept for the backward pass.
#[derive(Debug, Clone)]
struct BlockCache<T> {
    cin: usize,
    cout: usize,
    height: usize,
    width: usize,
    /// Zero-padded shifted copies of the input, `(cin·9) × (height·width)`.
    columns: Vec<T>,
    /// Convolution output before ReLU, `cout × height × width`.
    pre: Vec<T>,
}

/// Recorded forward pass. Borrows the parameters it was produced with.
#[derive(Debug, Clone)]
pub struct Tape<'p, T> {
    params: &'p ModelParams<T>,
    blocks: Vec<BlockCache<T>>,
    embedding: Vec<T>,
    /// Spatial size after the last pooling stage.
    final_hw: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<'p, T> {
    pub embedding: Vec<T>,
    pub prediction: T,
    pub tape: Tape<'p, T>,
}

/// Output rows/cols whose shifted source index stays inside the plane.
#[inline]
fn valid_range(ky: usize, kx: usize, h: usize, w: usize) -> (usize, usize, usize, usize) {
    let y0 = usize::from(ky == 0);
    let y1 = if ky == 2 { h - 1 } else { h };
    let x0 = usize::from(kx == 0);
    let x1 = if kx == 2 { w - 1 } else { w };
    (y0, y1, x0, x1)
}

/// Row `(i·3 + ky)·3 + kx` holds input channel `i` shifted by `(ky−1, kx−1)`
/// with zero padding, so a 3×3 convolution becomes a matrix product.
fn im2col<T: Real>(input: &[T], cin: usize, h: usize, w: usize) -> Vec<T> {
    let plane = h * w;
    let mut cols = vec![T::zero(); cin * KERNEL * KERNEL * plane];
    for i in 0..cin {
        let src = &input[i * plane..(i + 1) * plane];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (i * KERNEL + ky) * KERNEL + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (y0, y1, x0, x1) = valid_range(ky, kx, h, w);
                for y in y0..y1 {
                    let sy = y + ky - 1;
                    dst[y * w + x0..y * w + x1].copy_from_slice(&src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds column gradients back onto the input.
fn col2im<T: Real>(cols: &[T], cin: usize, h: usize, w: usize) -> Vec<T> {
    let plane = h * w;
    let mut out = vec![T::zero(); cin * plane];
    for i in 0..cin {
        let dst = &mut out[i * plane..(i + 1) * plane];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (i * KERNEL + ky) * KERNEL + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let (y0, y1, x0, x1) = valid_range(ky, kx, h, w);
                for y in y0..y1 {
                    let sy = y + ky - 1;
                    axpy(T::one(), &src[y * w + x0..y * w + x1], &mut dst[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1]);
                }
            }
        }
    }
    out
}

#[inline]
fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// Dot product with eight interleaved accumulators (fixed order, so still
/// deterministic).
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += xa[k] * xb[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn relu_avgpool<T: Real>(pre: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let relu = |v: T| if v > T::zero() { v } else { T::zero() };
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        let p = &pre[ch * h * w..(ch + 1) * h * w];
        for y in 0..ho {
            let (r0, r1) = (&p[2 * y * w..(2 * y + 1) * w], &p[(2 * y + 1) * w..(2 * y + 2) * w]);
            for x in 0..wo {
                let s = relu(r0[2 * x]) + relu(r0[2 * x + 1]) + relu(r1[2 * x]) + relu(r1[2 * x + 1]);
                out[(ch * ho + y) * wo + x] = s * quarter;
            }
        }
    }
    out
}

/// Runs the network on one image and records a tape for [`Tape::backward`].
pub fn forward<'p, T: Real>(
    params: &'p ModelParams<T>,
    image: &ImageTensor,
) -> Result<ForwardOutput<'p, T>> {
    let spec = params.spec();
    if image.height() != spec.input_height || image.width() != spec.input_width {
        return Err(Error::Config(format!(
            "image is {}x{}, model expects {}x{}",
            image.height(),
            image.width(),
            spec.input_height,
            spec.input_width
        )));
    }
    let (mut h, mut w) = (spec.input_height, spec.input_width);
    let mut act: Vec<T> = image.pixels().iter().map(|&p| T::of(f64::from(p))).collect();
    let mut cin = 1;
    let mut blocks = Vec::with_capacity(spec.blocks());
    for (k, &cout) in spec.channels.iter().enumerate() {
        let columns = im2col(&act, cin, h, w);
        let (weight, bias) = (params.array(2 * k), params.array(2 * k + 1));
        let plane = h * w;
        let taps = cin * KERNEL * KERNEL;
        let mut pre = vec![T::zero(); cout * plane];
        for o in 0..cout {
            let dst = &mut pre[o * plane..(o + 1) * plane];
            dst.iter_mut().for_each(|v| *v = bias[o]);
            for (t, &wv) in weight[o * taps..(o + 1) * taps].iter().enumerate() {
                axpy(wv, &columns[t * plane..(t + 1) * plane], dst);
            }
        }
        let pooled = relu_avgpool(&pre, cout, h, w);
        blocks.push(BlockCache { cin, cout, height: h, width: w, columns, pre });
        act = pooled;
        cin = cout;
        h /= 2;
        w /= 2;
    }
    let plane = h * w;
    let inv = T::one() / T::of(plane as f64);
    let embedding: Vec<T> =
        (0..cin).map(|c| act[c * plane..(c + 1) * plane].iter().copied().sum::<T>() * inv).collect();
    let nb = spec.blocks();
    let head_w = params.array(2 * nb);
    let head_b = params.array(2 * nb + 1)[0];
    let prediction = embedding.iter().zip(head_w).fold(head_b, |acc, (&f, &wv)| acc + f * wv);
    Ok(ForwardOutput {
        embedding: embedding.clone(),
        prediction,
        tape: Tape { params, blocks, embedding, final_hw: (h, w) },
    })
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn params(&self) -> &'p ModelParams<T> {
        self.params
    }

    /// Gradients of a scalar objective whose partial derivatives with respect
    /// to the embedding and the prediction are `d_embedding` and
    /// `d_prediction`.
    pub fn backward(&self, d_embedding: &[T], d_prediction: T) -> Result<Gradients<T>> {
        let mut grads = Gradients::zeros_like(self.params);
        self.backward_into(d_embedding, d_prediction, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`] but adds into an existing gradient store.
    pub fn backward_into(
        &self,
        d_embedding: &[T],
        d_prediction: T,
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        let d = self.embedding.len();
        if d_embedding.len() != d {
            return Err(Error::Usage(format!(
                "upstream embedding gradient has length {}, embedding has {d}",
                d_embedding.len()
            )));
        }
        if !grads.congruent_with(self.params) {
            return Err(Error::Usage("gradient store does not match the taped parameters".into()));
        }
        let nb = self.blocks.len();
        let head_w = self.params.array(2 * nb);

        // head
        for (g, &f) in grads.array_mut(2 * nb).iter_mut().zip(&self.embedding) {
            *g += d_prediction * f;
        }
        grads.array_mut(2 * nb + 1)[0] += d_prediction;
        let d_feat: Vec<T> =
            d_embedding.iter().zip(head_w).map(|(&de, &wv)| de + d_prediction * wv).collect();

        // global average pooling
        let (h, w) = self.final_hw;
        let plane = h * w;
        let inv = T::one() / T::of(plane as f64);
        let mut d_act: Vec<T> = Vec::with_capacity(d * plane);
        for &g in &d_feat {
            d_act.extend(std::iter::repeat(g * inv).take(plane));
        }

        for (k, block) in self.blocks.iter().enumerate().rev() {
            d_act = self.block_backward(k, block, &d_act, grads, k > 0);
        }
        Ok(())
    }

    fn block_backward(
        &self,
        k: usize,
        b: &BlockCache<T>,
        d_pooled: &[T],
        grads: &mut Gradients<T>,
        need_input_grad: bool,
    ) -> Vec<T> {
        let (h, w) = (b.height, b.width);
        let (ho, wo) = (h / 2, w / 2);
        let plane = h * w;
        let quarter = T::of(0.25);

        // average pool then ReLU mask (subgradient 0 at 0)
        let mut d_pre = vec![T::zero(); b.cout * plane];
        for c in 0..b.cout {
            for y in 0..h {
                for x in 0..w {
                    let idx = c * plane + y * w + x;
                    if b.pre[idx] > T::zero() {
                        d_pre[idx] = d_pooled[(c * ho + y / 2) * wo + x / 2] * quarter;
                    }
                }
            }
        }

        let taps = b.cin * KERNEL * KERNEL;
        {
            let gb = grads.array_mut(2 * k + 1);
            for c in 0..b.cout {
                gb[c] += d_pre[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
            }
        }
        let gw = grads.array_mut(2 * k);
        for o in 0..b.cout {
            let dp = &d_pre[o * plane..(o + 1) * plane];
            for t in 0..taps {
                gw[o * taps + t] += dot(dp, &b.columns[t * plane..(t + 1) * plane]);
            }
        }

        if !need_input_grad {
            return Vec::new();
        }
        let weight = self.params.array(2 * k);
        let mut d_cols = vec![T::zero(); taps * plane];
        for o in 0..b.cout {
            let dp = &d_pre[o * plane..(o + 1) * plane];
            for t in 0..taps {
                axpy(weight[o * taps + t], dp, &mut d_cols[t * plane..(t + 1) * plane]);
            }
        }
        col2im(&d_cols, b.cin, h, w)
    }

    /// ReLU activation pattern of every block, used by gradient checks to
    /// detect finite-difference steps that cross a kink.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.blocks.iter().flat_map(|b| b.pre.iter().map(|&v| v > T::zero())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::ModelSpec;

    fn image(h: usize, w: usize, seed: u64) -> ImageTensor {
        use rand::Rng;
        let mut rng = crate::seed::rng(seed);
        ImageTensor::new(h, w, (0..h * w).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    #[test]
    fn zero_params_zero_image() {
        let spec = ModelSpec::default();
        let params = ModelParams::<f32>::zeros(&spec).unwrap();
        let img = ImageTensor::zeros(32, 32);
        let out = forward(&params, &img).unwrap();
        assert_eq!(out.embedding, vec![0.0; 16]);
        assert_eq!(out.prediction, 0.0);

        let mut with_bias = params.clone();
        with_bias.arrays_mut().last_mut().unwrap().data[0] = 0.37;
        assert_eq!(forward(&with_bias, &img).unwrap().prediction, 0.37);
    }

    #[test]
    fn forward_is_deterministic() {
        let spec = ModelSpec::default();
        let params = ModelParams::<f32>::init(&spec, 11).unwrap();
        let img = image(32, 32, 5);
        let a = forward(&params, &img).unwrap();
        let b = forward(&params, &img).unwrap();
        assert_eq!(a.embedding, b.embedding);
        assert_eq!(a.prediction.to_bits(), b.prediction.to_bits());
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let params = ModelParams::<f32>::zeros(&ModelSpec::default()).unwrap();
        assert!(matches!(forward(&params, &ImageTensor::zeros(16, 32)), Err(Error::Config(_))));
    }

    #[test]
    fn backward_rejects_wrong_upstream_length() {
        let params = ModelParams::<f32>::init(&ModelSpec::default(), 1).unwrap();
        let out = forward(&params, &image(32, 32, 1)).unwrap();
        assert!(matches!(out.tape.backward(&[0.0; 3], 1.0), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let params = ModelParams::<f32>::init(&ModelSpec::default(), 2).unwrap();
        let out = forward(&params, &image(32, 32, 2)).unwrap();
        let g = out.tape.backward(&[0.0; 16], 0.0).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }
}
