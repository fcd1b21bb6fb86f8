use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

fn pooled_extent(h: usize, win: usize, stride: usize, ceil: bool) -> usize {
    if ceil {
        (h.saturating_sub(win) + stride - 1) / stride + 1
    } else {
        (h - win) / stride + 1
    }
}

impl<E: Scalar> Tape<E> {
    /// Spatial pooling over H×W×D or B×H×W×D.
    ///
    /// With ceil mode on, a ragged final window covers what remains of the
    /// plane; averages divide by the true in-window count.
    pub fn pool2d(
        &mut self,
        x: Var,
        mode: PoolMode,
        window: (usize, usize),
        stride: (usize, usize),
        ceil_mode: bool,
    ) -> Result<Var> {
        let xv = self.value(x).clone();
        let (batched, b, h, w, d) = match xv.shape() {
            [h, w, d] => (false, 1, *h, *w, *d),
            [b, h, w, d] => (true, *b, *h, *w, *d),
            other => return Err(Error::shape("pool2d", format!("input rank {}", other.len()))),
        };
        let (wh, ww) = window;
        let (sh, sw) = stride;
        if wh == 0 || ww == 0 {
            return Err(Error::invalid("pool2d", "window must be >= 1".to_string()));
        }
        if sh == 0 || sw == 0 {
            return Err(Error::invalid("pool2d", "stride must be >= 1".to_string()));
        }
        if wh > h || ww > w {
            return Err(Error::shape("pool2d", format!("window {wh}x{ww} exceeds plane {h}x{w}")));
        }
        let oh = pooled_extent(h, wh, sh, ceil_mode);
        let ow = pooled_extent(w, ww, sw, ceil_mode);
        let img_len = h * w * d;
        let out_img = oh * ow * d;

        let mut data = vec![E::zero(); b * out_img];
        // Max pooling records the winning flat offset per output cell; ties go
        // to the first element in raster order.
        let mut argmax = if matches!(mode, PoolMode::Max) {
            vec![0usize; b * out_img]
        } else {
            Vec::new()
        };
        for bi in 0..b {
            let img = &xv.data()[bi * img_len..(bi + 1) * img_len];
            for oy in 0..oh {
                let y0 = oy * sh;
                let y1 = (y0 + wh).min(h);
                for ox in 0..ow {
                    let x0 = ox * sw;
                    let x1 = (x0 + ww).min(w);
                    for ch in 0..d {
                        let out_idx = bi * out_img + (oy * ow + ox) * d + ch;
                        match mode {
                            PoolMode::Max => {
                                let mut best = E::neg_infinity();
                                let mut best_off = 0;
                                for y in y0..y1 {
                                    for xx in x0..x1 {
                                        let off = (y * w + xx) * d + ch;
                                        if img[off] > best {
                                            best = img[off];
                                            best_off = off;
                                        }
                                    }
                                }
                                data[out_idx] = best;
                                argmax[out_idx] = best_off;
                            }
                            PoolMode::Avg => {
                                let mut acc = E::zero();
                                for y in y0..y1 {
                                    for xx in x0..x1 {
                                        acc += img[(y * w + xx) * d + ch];
                                    }
                                }
                                let count = E::of(((y1 - y0) * (x1 - x0)) as f64);
                                data[out_idx] = acc / count;
                            }
                        }
                    }
                }
            }
        }

        let out_shape = if batched { vec![b, oh, ow, d] } else { vec![oh, ow, d] };
        let out = Tensor::new(out_shape, data)?;
        let xshape = xv.shape().to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(x, &xshape, |gx| match mode {
                    PoolMode::Max => {
                        for bi in 0..b {
                            for cell in 0..out_img {
                                gx[bi * img_len + argmax[bi * out_img + cell]] += g.data()[bi * out_img + cell];
                            }
                        }
                    }
                    PoolMode::Avg => {
                        for bi in 0..b {
                            for oy in 0..oh {
                                let y0 = oy * sh;
                                let y1 = (y0 + wh).min(h);
                                for ox in 0..ow {
                                    let x0 = ox * sw;
                                    let x1 = (x0 + ww).min(w);
                                    let count = E::of(((y1 - y0) * (x1 - x0)) as f64);
                                    for ch in 0..d {
                                        let gv = g.data()[bi * out_img + (oy * ow + ox) * d + ch] / count;
                                        for y in y0..y1 {
                                            for xx in x0..x1 {
                                                gx[bi * img_len + (y * w + xx) * d + ch] += gv;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            })),
        ))
    }

    /// Average pooling to a fixed oh×ow grid; windows partition the plane as
    /// evenly as possible.
    pub fn adaptive_avg_pool2d(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let xv = self.value(x).clone();
        let (batched, b, h, w, d) = match xv.shape() {
            [h, w, d] => (false, 1, *h, *w, *d),
            [b, h, w, d] => (true, *b, *h, *w, *d),
            other => return Err(Error::shape("adaptive_avg_pool2d", format!("input rank {}", other.len()))),
        };
        if oh == 0 || ow == 0 || oh > h || ow > w {
            return Err(Error::invalid(
                "adaptive_avg_pool2d",
                format!("target {oh}x{ow} for plane {h}x{w}"),
            ));
        }
        let bounds = |i: usize, n: usize, total: usize| (i * total / n, (i + 1) * total / n);
        let img_len = h * w * d;
        let out_img = oh * ow * d;
        let mut data = vec![E::zero(); b * out_img];
        for bi in 0..b {
            let img = &xv.data()[bi * img_len..(bi + 1) * img_len];
            for oy in 0..oh {
                let (y0, y1) = bounds(oy, oh, h);
                for ox in 0..ow {
                    let (x0, x1) = bounds(ox, ow, w);
                    let count = E::of(((y1 - y0) * (x1 - x0)) as f64);
                    for ch in 0..d {
                        let mut acc = E::zero();
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                acc += img[(y * w + xx) * d + ch];
                            }
                        }
                        data[bi * out_img + (oy * ow + ox) * d + ch] = acc / count;
                    }
                }
            }
        }
        let out_shape = if batched { vec![b, oh, ow, d] } else { vec![oh, ow, d] };
        let out = Tensor::new(out_shape, data)?;
        let xshape = xv.shape().to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(x, &xshape, |gx| {
                    for bi in 0..b {
                        for oy in 0..oh {
                            let (y0, y1) = bounds(oy, oh, h);
                            for ox in 0..ow {
                                let (x0, x1) = bounds(ox, ow, w);
                                let count = E::of(((y1 - y0) * (x1 - x0)) as f64);
                                for ch in 0..d {
                                    let gv = g.data()[bi * out_img + (oy * ow + ox) * d + ch] / count;
                                    for y in y0..y1 {
                                        for xx in x0..x1 {
                                            gx[bi * img_len + (y * w + xx) * d + ch] += gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            })),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_stays_constant_under_max() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::filled(&[4, 6, 2], 0.7));
        let y = tape.pool2d(x, PoolMode::Max, (2, 2), (2, 2), false).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 2]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn ceil_mode_on_5x5_gives_3x3() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[5, 5, 1], |i| i as f64));
        let y = tape.pool2d(x, PoolMode::Max, (2, 2), (2, 2), true).unwrap();
        assert_eq!(tape.shape(y), &[3, 3, 1]);
        // Bottom-right ragged window holds only element 24.
        assert_eq!(tape.value(y).data()[8], 24.0);
    }

    #[test]
    fn global_average_is_mean() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[3, 4, 1], |i| i as f64));
        let y = tape.pool2d(x, PoolMode::Avg, (3, 4), (1, 1), false).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1]);
        assert!((tape.value(y).data()[0] - 5.5).abs() < 1e-12);
    }

    #[test]
    fn ragged_average_divides_by_true_count() {
        let mut tape = Tape::<f64>::new();
        // 3x1 plane pooled 2x1 stride 2 with ceil: windows {0,1} and {2}.
        let x = tape.leaf(Tensor::new(vec![3, 1, 1], vec![1.0, 3.0, 5.0]).unwrap());
        let y = tape.pool2d(x, PoolMode::Avg, (2, 1), (2, 1), true).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 5.0]);
    }

    #[test]
    fn max_gradient_goes_to_first_max_in_raster_order() {
        let mut tape = Tape::<f64>::new();
        let p = tape.register_param("x", Tensor::new(vec![2, 2, 1], vec![3.0, 3.0, 1.0, 2.0]).unwrap());
        let x = tape.param(p);
        let y = tape.pool2d(x, PoolMode::Max, (2, 2), (2, 2), false).unwrap();
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.param_grad(p).data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn adaptive_pool_partitions_unevenly() {
        let mut tape = Tape::<f64>::new();
        // 5 rows to 2 bins: rows {0,1} then {2,3,4}.
        let x = tape.leaf(Tensor::from_fn(&[5, 1, 1], |i| i as f64));
        let y = tape.adaptive_avg_pool2d(x, 2, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 3.0]);
    }

    #[test]
    fn adaptive_pool_identity_when_sizes_match() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[5, 5, 3], |i| (i as f64).cos()));
        let y = tape.adaptive_avg_pool2d(x, 5, 5).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }
}
