use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// Unnormalized 3x3 Gaussian taps exp(-(dx²+dy²)/(2σ²)) indexed [dy+1][dx+1].
pub fn gaussian3x3_weights(sigma: f64) -> [[f64; 3]; 3] {
    let mut w = [[0.0; 3]; 3];
    for (dy, row) in w.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (fy, fx) = (dy as f64 - 1.0, dx as f64 - 1.0);
            *v = (-(fx * fx + fy * fy) / (2.0 * sigma * sigma)).exp();
        }
    }
    w
}

impl<E: Scalar> Tape<E> {
    /// 3x3 Gaussian smoothing of every depth slice over the H×W plane,
    /// stride 1. Border cells renormalize by the sum of in-bounds taps, so
    /// constant planes are fixed points.
    pub fn gaussian3x3(&mut self, x: Var, sigma: f64) -> Result<Var> {
        if sigma <= 0.0 {
            return Err(Error::invalid("gaussian3x3", format!("sigma {sigma}")));
        }
        let xv = self.value(x).clone();
        let (batched, b, h, w, d) = match xv.shape() {
            [h, w, d] => (false, 1, *h, *w, *d),
            [b, h, w, d] => (true, *b, *h, *w, *d),
            other => return Err(Error::shape("gaussian3x3", format!("input rank {}", other.len()))),
        };
        let taps = gaussian3x3_weights(sigma);
        // In-bounds tap sum depends only on the border class of (y, x).
        let norm: Vec<f64> = (0..h * w)
            .map(|i| {
                let (y, xx) = (i / w, i % w);
                let mut s = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (y as i64 + dy, xx as i64 + dx);
                        if ny >= 0 && ny < h as i64 && nx >= 0 && nx < w as i64 {
                            s += taps[(dy + 1) as usize][(dx + 1) as usize];
                        }
                    }
                }
                s
            })
            .collect();

        let img_len = h * w * d;
        let smooth_one = |img: &[E], out: &mut [E]| {
            for y in 0..h {
                for xx in 0..w {
                    let inv = E::of(1.0 / norm[y * w + xx]);
                    let dst = &mut out[(y * w + xx) * d..(y * w + xx + 1) * d];
                    for dy in -1i64..=1 {
                        let ny = y as i64 + dy;
                        if ny < 0 || ny >= h as i64 {
                            continue;
                        }
                        for dx in -1i64..=1 {
                            let nx = xx as i64 + dx;
                            if nx < 0 || nx >= w as i64 {
                                continue;
                            }
                            let tap = E::of(taps[(dy + 1) as usize][(dx + 1) as usize]) * inv;
                            let src = &img[(ny as usize * w + nx as usize) * d..(ny as usize * w + nx as usize + 1) * d];
                            for (o, &v) in dst.iter_mut().zip(src) {
                                *o += v * tap;
                            }
                        }
                    }
                }
            }
        };

        let mut data = vec![E::zero(); b * img_len];
        if b > 1 {
            data.par_chunks_mut(img_len)
                .zip(xv.data().par_chunks(img_len))
                .for_each(|(out, img)| smooth_one(img, out));
        } else {
            smooth_one(xv.data(), &mut data);
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let xshape = xv.shape().to_vec();
        let _ = batched;
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(x, &xshape, |gx| {
                    let back_one = |g_img: &[E], gx_img: &mut [E]| {
                        for y in 0..h {
                            for xx in 0..w {
                                let inv = E::of(1.0 / norm[y * w + xx]);
                                let grow = &g_img[(y * w + xx) * d..(y * w + xx + 1) * d];
                                for dy in -1i64..=1 {
                                    let ny = y as i64 + dy;
                                    if ny < 0 || ny >= h as i64 {
                                        continue;
                                    }
                                    for dx in -1i64..=1 {
                                        let nx = xx as i64 + dx;
                                        if nx < 0 || nx >= w as i64 {
                                            continue;
                                        }
                                        let tap = E::of(taps[(dy + 1) as usize][(dx + 1) as usize]) * inv;
                                        let dst = &mut gx_img
                                            [(ny as usize * w + nx as usize) * d..(ny as usize * w + nx as usize + 1) * d];
                                        for (o, &gv) in dst.iter_mut().zip(grow) {
                                            *o += gv * tap;
                                        }
                                    }
                                }
                            }
                        }
                    };
                    if b > 1 {
                        gx.par_chunks_mut(img_len)
                            .zip(g.data().par_chunks(img_len))
                            .for_each(|(gx_img, g_img)| back_one(g_img, gx_img));
                    } else {
                        back_one(g.data(), gx);
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
    fn tap_values_at_sigma_0_8() {
        let w = gaussian3x3_weights(0.8);
        assert!((w[1][1] - 1.0).abs() < 1e-9);
        assert!((w[1][0] - 0.45783).abs() < 1e-5);
        assert!((w[0][0] - 0.20961).abs() < 1e-5);
        let interior: f64 = w.iter().flatten().sum();
        assert!((interior - 3.66976).abs() < 1e-5);
    }

    #[test]
    fn constant_plane_is_fixed_point() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::filled(&[4, 5, 3], 0.37));
        let y = tape.gaussian3x3(x, 0.8).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_stays_within_input_range() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[6, 6, 2], |i| if i % 3 == 0 { 1.0 } else { -1.0 }));
        let y = tape.gaussian3x3(x, 0.8).unwrap();
        for &v in tape.value(y).data() {
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn single_cell_plane_passes_through() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![1, 1, 2], vec![0.25, -0.5]).unwrap());
        let y = tape.gaussian3x3(x, 0.8).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25, -0.5]);
    }
}
