use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that keeps the spatial size.
    Same,
    /// No padding; the output shrinks by `kernel - 1`.
    Valid,
}

fn dims3<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::shape(format!("{what} must be (H, W, C), got {s:?}"))),
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

impl ConvGeometry {
    fn new<T: Scalar>(
        x: &Tensor<T>,
        w: &Tensor<T>,
        b: &Tensor<T>,
        padding: Padding,
    ) -> Result<Self> {
        let (h, wd, cin) = dims3(x, "conv input")?;
        let (kh, kw, wcin, cout) = match *w.shape() {
            [a, b, c, d] => (a, b, c, d),
            ref s => {
                return Err(Error::shape(format!(
                    "conv kernel must be (kh, kw, Cin, Cout), got {s:?}"
                )))
            }
        };
        if wcin != cin {
            return Err(Error::shape(format!(
                "conv kernel expects {wcin} input channels, input has {cin}"
            )));
        }
        if b.shape() != [cout] {
            return Err(Error::shape(format!(
                "conv bias must be ({cout},), got {:?}",
                b.shape()
            )));
        }
        let (oh, ow, pad_top, pad_left) = match padding {
            Padding::Same => (h, wd, (kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => {
                if h < kh || wd < kw {
                    return Err(Error::shape(format!(
                        "{h}x{wd} input is smaller than the {kh}x{kw} kernel"
                    )));
                }
                (h - kh + 1, wd - kw + 1, 0, 0)
            }
        };
        Ok(Self {
            h,
            w: wd,
            cin,
            kh,
            kw,
            cout,
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    /// Input pixel under kernel tap (ky, kx) for output (oy, ox), if inside.
    #[inline]
    fn input_at(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy + ky).checked_sub(self.pad_top)?;
        let ix = (ox + kx).checked_sub(self.pad_left)?;
        (iy < self.h && ix < self.w).then_some(iy * self.w + ix)
    }
}

/// 2-D cross-correlation plus bias. `x` is (H, W, Cin), `w` is
/// (kh, kw, Cin, Cout) and `b` is (Cout).
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x, w, b, padding)?;
    let (xs, ws) = (x.data(), w.data());
    let mut out = vec![T::zero(); g.oh * g.ow * g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let acc = &mut out[(oy * g.ow + ox) * g.cout..][..g.cout];
            acc.copy_from_slice(b.data());
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let Some(pix) = g.input_at(oy, ox, ky, kx) else {
                        continue;
                    };
                    let xin = &xs[pix * g.cin..][..g.cin];
                    let taps = &ws[(ky * g.kw + kx) * g.cin * g.cout..][..g.cin * g.cout];
                    for (&xv, wrow) in xin.iter().zip(taps.chunks_exact(g.cout)) {
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.oh, g.ow, g.cout], out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T = f32> {
    /// Gradient with respect to the input; skipped when not requested.
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

/// Gradients of a scalar loss through [`conv2d`], given `dy` = dL/d(output).
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    padding: Padding,
    dy: &Tensor<T>,
    want_dx: bool,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(x, w, b, padding)?;
    if dy.shape() != [g.oh, g.ow, g.cout] {
        return Err(Error::shape(format!(
            "conv output gradient must be {:?}, got {:?}",
            [g.oh, g.ow, g.cout],
            dy.shape()
        )));
    }
    let (xs, ws, dys) = (x.data(), w.data(), dy.data());
    let mut dx = if want_dx {
        vec![T::zero(); xs.len()]
    } else {
        Vec::new()
    };
    let mut dw = vec![T::zero(); ws.len()];
    let mut db = vec![T::zero(); g.cout];

    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let grad = &dys[(oy * g.ow + ox) * g.cout..][..g.cout];
            for (d, &gv) in db.iter_mut().zip(grad) {
                *d += gv;
            }
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let Some(pix) = g.input_at(oy, ox, ky, kx) else {
                        continue;
                    };
                    let tap = (ky * g.kw + kx) * g.cin * g.cout;
                    let xin = &xs[pix * g.cin..][..g.cin];
                    let dtaps = &mut dw[tap..][..g.cin * g.cout];
                    for (&xv, drow) in xin.iter().zip(dtaps.chunks_exact_mut(g.cout)) {
                        for (d, &gv) in drow.iter_mut().zip(grad) {
                            *d += xv * gv;
                        }
                    }
                    if want_dx {
                        let taps = &ws[tap..][..g.cin * g.cout];
                        let dxin = &mut dx[pix * g.cin..][..g.cin];
                        for (d, wrow) in dxin.iter_mut().zip(taps.chunks_exact(g.cout)) {
                            let mut s = T::zero();
                            for (&wv, &gv) in wrow.iter().zip(grad) {
                                s += wv * gv;
                            }
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        dx: if want_dx {
            Some(Tensor::new(x.shape().to_vec(), dx)?)
        } else {
            None
        },
        dw: Tensor::new(w.shape().to_vec(), dw)?,
        db: Tensor::new(vec![g.cout], db)?,
    })
}

fn pool_dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (h, w, c) = dims3(x, "pool input")?;
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("{h}x{w} input is too small to pool")));
    }
    Ok((h, w, c))
}

/// Offset into `x` of the maximum of window (py, px) in channel `ch`; ties go
/// to the first element in row-major order.
#[inline]
fn window_argmax<T: Scalar>(
    xs: &[T],
    w: usize,
    c: usize,
    py: usize,
    px: usize,
    ch: usize,
) -> usize {
    let mut best = ((2 * py) * w + 2 * px) * c + ch;
    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
        let idx = ((2 * py + dy) * w + 2 * px + dx) * c + ch;
        if xs[idx] > xs[best] {
            best = idx;
        }
    }
    best
}

/// 2×2 max pooling with stride 2; a trailing odd row or column is dropped.
pub fn maxpool2x2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = pool_dims(x)?;
    let (oh, ow) = (h / 2, w / 2);
    let xs = x.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    for py in 0..oh {
        for px in 0..ow {
            for ch in 0..c {
                out.push(xs[window_argmax(xs, w, c, py, px, ch)]);
            }
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

/// Routes each output gradient to the position that won its window.
pub fn maxpool2x2_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = pool_dims(x)?;
    let (oh, ow) = (h / 2, w / 2);
    if dy.shape() != [oh, ow, c] {
        return Err(Error::shape(format!(
            "pool output gradient must be {:?}, got {:?}",
            [oh, ow, c],
            dy.shape()
        )));
    }
    let xs = x.data();
    let mut dx = vec![T::zero(); xs.len()];
    let mut g = dy.data().iter();
    for py in 0..oh {
        for px in 0..ow {
            for ch in 0..c {
                dx[window_argmax(xs, w, c, py, px, ch)] += *g.next().expect("sized above");
            }
        }
    }
    Tensor::new(x.shape().to_vec(), dx)
}

fn dense_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize)> {
    let (n, m) = match *w.shape() {
        [n, m] => (n, m),
        ref s => {
            return Err(Error::shape(format!(
                "dense weights must be (n, m), got {s:?}"
            )))
        }
    };
    if x.shape() != [n] {
        return Err(Error::shape(format!(
            "dense layer expects ({n},) input, got {:?}",
            x.shape()
        )));
    }
    if b.shape() != [m] {
        return Err(Error::shape(format!(
            "dense bias must be ({m},), got {:?}",
            b.shape()
        )));
    }
    Ok((n, m))
}

/// `y = x W + b` for a vector `x`.
pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, m) = dense_dims(x, w, b)?;
    let mut y = b.data().to_vec();
    for (&xv, wrow) in x.data().iter().zip(w.data().chunks_exact(m)) {
        for (a, &wv) in y.iter_mut().zip(wrow) {
            *a += xv * wv;
        }
    }
    Ok(Tensor::vector(y))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads<T = f32> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (n, m) = dense_dims(x, w, b)?;
    if dy.shape() != [m] {
        return Err(Error::shape(format!(
            "dense output gradient must be ({m},), got {:?}",
            dy.shape()
        )));
    }
    let g = dy.data();
    let mut dw = Vec::with_capacity(n * m);
    let mut dx = Vec::with_capacity(n);
    for (&xv, wrow) in x.data().iter().zip(w.data().chunks_exact(m)) {
        dw.extend(g.iter().map(|&gv| xv * gv));
        dx.push(wrow.iter().zip(g).map(|(&wv, &gv)| wv * gv).sum());
    }
    Ok(DenseGrads {
        dx: Tensor::vector(dx),
        dw: Tensor::new(vec![n, m], dw)?,
        db: dy.clone(),
    })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != dy.shape() {
        return Err(Error::shape(format!(
            "relu gradient {:?} does not match input {:?}",
            dy.shape(),
            x.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Softmax over a vector, shifted by its maximum so large logits cannot overflow.
pub fn softmax<T: Scalar>(z: &Tensor<T>) -> Tensor<T> {
    let max = z.data().iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.data().iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    Tensor::new(
        z.shape().to_vec(),
        exps.into_iter().map(|e| e / sum).collect(),
    )
    .expect("same shape")
}

/// Backward pass through softmax given its output `s`: `s * (dy - <dy, s>)`.
pub fn softmax_backward<T: Scalar>(s: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if s.shape() != dy.shape() {
        return Err(Error::shape("softmax gradient does not match output"));
    }
    let dot: T = s.data().iter().zip(dy.data()).map(|(&a, &b)| a * b).sum();
    Tensor::new(
        s.shape().to_vec(),
        s.data()
            .iter()
            .zip(dy.data())
            .map(|(&sv, &g)| sv * (g - dot))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_sums_ones() {
        let x = t(&[3, 3, 1], &[1.0; 9]);
        let w = t(&[3, 3, 1, 1], &[1.0; 9]);
        let b = t(&[1], &[0.0]);
        let y = conv2d(&x, &w, &b, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv_same_padding_uses_zeros() {
        let x = t(&[3, 3, 1], &[1.0; 9]);
        let w = t(&[3, 3, 1, 1], &[1.0; 9]);
        let b = t(&[1], &[0.5]);
        let y = conv2d(&x, &w, &b, Padding::Same).unwrap();
        assert_eq!(y.data(), &[4.5, 6.5, 4.5, 6.5, 9.5, 6.5, 4.5, 6.5, 4.5]);
    }

    #[test]
    fn conv_is_cross_correlation() {
        let x = t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[2, 2, 1, 1], &[1.0, 0.0, 0.0, 0.0]);
        let y = conv2d(&x, &w, &t(&[1], &[0.0]), Padding::Valid).unwrap();
        // no kernel flip: the top-left tap reads the top-left pixel
        assert_eq!(y.data(), &[1.0]);
    }

    #[test]
    fn conv_output_shapes_of_classifier() {
        let w = Tensor::<f32>::zeros(vec![3, 3, 1, 8]);
        let b = Tensor::<f32>::zeros(vec![8]);
        let x = Tensor::<f32>::zeros(vec![224, 224, 1]);
        assert_eq!(
            conv2d(&x, &w, &b, Padding::Same).unwrap().shape(),
            &[224, 224, 8]
        );
        assert_eq!(w.len() + b.len(), 80);

        let w = Tensor::<f32>::zeros(vec![3, 3, 8, 16]);
        let b = Tensor::<f32>::zeros(vec![16]);
        let x = Tensor::<f32>::zeros(vec![112, 112, 8]);
        assert_eq!(
            conv2d(&x, &w, &b, Padding::Valid).unwrap().shape(),
            &[110, 110, 16]
        );
        assert_eq!(w.len() + b.len(), 1168);
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::<f64>::zeros(vec![4, 4, 2]);
        let w = Tensor::<f64>::zeros(vec![3, 3, 1, 4]);
        let b = Tensor::<f64>::zeros(vec![4]);
        assert!(matches!(
            conv2d(&x, &w, &b, Padding::Same),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::<f64>::from_fn(vec![5, 4, 3], |i| (i as f64).sin());
        let w = Tensor::from_fn(vec![1, 1, 3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let b = Tensor::zeros(vec![3]);
        assert_eq!(conv2d(&x, &w, &b, Padding::Same).unwrap(), x);
        assert_eq!(conv2d(&x, &w, &b, Padding::Valid).unwrap(), x);
    }

    #[test]
    fn pool_picks_max_and_routes_gradient() {
        let x = t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(maxpool2x2(&x).unwrap().data(), &[4.0]);
        let dx = maxpool2x2_backward(&x, &t(&[1, 1, 1], &[5.0])).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 5.0]);
    }

    #[test]
    fn pool_ties_route_to_first() {
        let x = t(&[2, 2, 1], &[7.0; 4]);
        assert_eq!(maxpool2x2(&x).unwrap().data(), &[7.0]);
        let dx = maxpool2x2_backward(&x, &t(&[1, 1, 1], &[1.0])).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pool_floors_odd_sizes() {
        let x = Tensor::<f32>::zeros(vec![53, 53, 32]);
        assert_eq!(maxpool2x2(&x).unwrap().shape(), &[26, 26, 32]);
        let c = Tensor::<f32>::from_fn(vec![6, 6, 2], |_| 3.0);
        assert!(maxpool2x2(&c).unwrap().data().iter().all(|&v| v == 3.0));
        assert!(maxpool2x2(&Tensor::<f32>::zeros(vec![1, 4, 1])).is_err());
    }

    #[test]
    fn dense_identity_and_counts() {
        let x = Tensor::<f64>::vector(vec![1.0, -2.0, 3.0]);
        let w = Tensor::from_fn(vec![3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let b = Tensor::zeros(vec![3]);
        assert_eq!(dense(&x, &w, &b).unwrap(), x);
        assert!(dense(&Tensor::<f64>::zeros(vec![2]), &w, &b).is_err());
        assert_eq!(9216 * 24 + 24, 221_208);
        assert_eq!(24 * 3 + 3, 75);
    }

    #[test]
    fn relu_values() {
        let x = Tensor::<f64>::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_values() {
        let s = softmax(&Tensor::<f64>::vector(vec![0.0, 0.0, 0.0]));
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let z = Tensor::<f64>::vector(vec![0.3, -1.2, 2.0]);
        let shifted = z.map(|v| v + 1000.0);
        let (a, b) = (softmax(&z), softmax(&shifted));
        assert!(b.is_finite());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let big = softmax(&Tensor::<f32>::vector(vec![1000.0, 0.0, -1000.0]));
        assert!(big.is_finite());
        assert!(big.data().iter().all(|&p| p >= 0.0));
    }
}
