//! Straightforward loop implementations written independently of the
//! library, plus the 50-instance comparison suite.

use rand::Rng as _;
use unmixsr::hsi::{degrade, AbundanceMap, EndmemberMatrix, HsiCube, Raster};
use unmixsr::metrics;
use unmixsr::srnet::{abun_loss, sr_loss_total, SrLossWeights};
use unmixsr::tensor::rng::{self, Rng};
use unmixsr::tensor::{Graph, Tensor};
use unmixsr::unmixing::{unloss_l1, unloss_sad, unloss_total, unloss_tv, UnLossWeights};

use super::rand_tensor;

pub fn conv2d(x: &Tensor, k: &Tensor, b: &[f64], pad: usize) -> Vec<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, ks) = (k.shape()[0], k.shape()[2]);
    let oh = h + 2 * pad + 1 - ks;
    let ow = w + 2 * pad + 1 - ks;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = b[oc];
                for ic in 0..c {
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let iy = y as isize + ky as isize - pad as isize;
                            let ix = xx as isize + kx as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            s += x.data()[(ic * h + iy as usize) * w + ix as usize]
                                * k.data()[((oc * c + ic) * ks + ky) * ks + kx];
                        }
                    }
                }
                out[(oc * oh + y) * ow + xx] = s;
            }
        }
    }
    out
}

pub fn conv_transpose2d(x: &Tensor, k: &Tensor, stride: usize) -> Vec<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, ks) = (k.shape()[1], k.shape()[2]);
    let oh = (h - 1) * stride + ks;
    let ow = (w - 1) * stride + ks;
    let mut out = vec![0.0; o * oh * ow];
    for ic in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let v = x.data()[(ic * h + y) * w + xx];
                for oc in 0..o {
                    for ky in 0..ks {
                        for kx in 0..ks {
                            out[(oc * oh + y * stride + ky) * ow + xx * stride + kx] +=
                                v * k.data()[((ic * o + oc) * ks + ky) * ks + kx];
                        }
                    }
                }
            }
        }
    }
    out
}

fn mirror(mut i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Blur (direct 2-D Gaussian), block mean, clip; no noise.
pub fn degrade_noiseless(hr: &Raster, n: usize, sigma: f64) -> Vec<f64> {
    let (h, w, c) = (hr.height(), hr.width(), hr.channels());
    let r = if sigma > 0.0 { (3.0 * sigma).ceil() as isize } else { 0 };
    let mut weights = Vec::new();
    let mut total = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let v = if sigma > 0.0 {
                (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp()
            } else {
                1.0
            };
            weights.push((dy, dx, v));
            total += v;
        }
    }
    let (lh, lw) = (h / n, w / n);
    let mut out = vec![0.0; c * lh * lw];
    for ch in 0..c {
        let mut blurred = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for &(dy, dx, v) in &weights {
                    let sy = mirror(y as isize + dy, h);
                    let sx = mirror(x as isize + dx, w);
                    s += v / total * hr.get(ch, sy, sx);
                }
                blurred[y * w + x] = s;
            }
        }
        for y in 0..lh {
            for x in 0..lw {
                let mut s = 0.0;
                for dy in 0..n {
                    for dx in 0..n {
                        s += blurred[(y * n + dy) * w + x * n + dx];
                    }
                }
                out[(ch * lh + y) * lw + x] = (s / (n * n) as f64).clamp(0.0, 1.0);
            }
        }
    }
    out
}

pub fn psnr(a: &Raster, b: &Raster) -> f64 {
    let mut total = 0.0;
    for c in 0..a.channels() {
        let mut se = 0.0;
        for y in 0..a.height() {
            for x in 0..a.width() {
                let d = a.get(c, y, x) - b.get(c, y, x);
                se += d * d;
            }
        }
        let mse = se / (a.height() * a.width()) as f64;
        total += 10.0 * (1.0 / mse).log10();
    }
    total / a.channels() as f64
}

pub fn ssim(a: &Raster, b: &Raster) -> f64 {
    let (c1, c2) = (1e-4, 9e-4);
    let mut g = [[0.0; 11]; 11];
    let mut gs = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / 4.5).exp();
            gs += *v;
        }
    }
    let mut total = 0.0;
    for c in 0..a.channels() {
        let mut band = 0.0;
        let mut count = 0;
        for y in 0..=a.height() - 11 {
            for x in 0..=a.width() - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = g[i][j] / gs;
                        let (va, vb) = (a.get(c, y + i, x + j), b.get(c, y + i, x + j));
                        ma += wgt * va;
                        mb += wgt * vb;
                        saa += wgt * va * va;
                        sbb += wgt * vb * vb;
                        sab += wgt * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                band += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total += band / count as f64;
    }
    total / a.channels() as f64
}

fn angle(u: &[f64], v: &[f64]) -> f64 {
    let (mut d, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (x, y) in u.iter().zip(v) {
        d += x * y;
        nu += x * x;
        nv += y * y;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (d / (nu.sqrt() * nv.sqrt())).max(-1.0).min(1.0).acos()
}

/// Mean per-pixel angle in radians.
pub fn mean_angle(a: &Raster, b: &Raster) -> f64 {
    let mut total = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let u: Vec<f64> = (0..a.channels()).map(|c| a.get(c, y, x)).collect();
            let v: Vec<f64> = (0..b.channels()).map(|c| b.get(c, y, x)).collect();
            total += angle(&u, &v);
        }
    }
    total / (a.height() * a.width()) as f64
}

pub fn ergas(a: &Raster, b: &Raster, n: usize) -> f64 {
    let mut acc = 0.0;
    let mut used = 0;
    for c in 0..a.channels() {
        let (mut mean, mut se) = (0.0, 0.0);
        for y in 0..a.height() {
            for x in 0..a.width() {
                mean += a.get(c, y, x);
                let d = a.get(c, y, x) - b.get(c, y, x);
                se += d * d;
            }
        }
        let np = (a.height() * a.width()) as f64;
        mean /= np;
        if mean == 0.0 {
            continue;
        }
        acc += (se / np) / (mean * mean);
        used += 1;
    }
    100.0 / n as f64 * (acc / used as f64).sqrt()
}

pub fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).abs();
    }
    s / a.len() as f64
}

pub fn tv(m: &EndmemberMatrix) -> f64 {
    let mut s = 0.0;
    for i in 0..m.p() {
        for b in 1..m.bands() {
            s += (m.row(i)[b] - m.row(i)[b - 1]).abs();
        }
    }
    s / (m.p() * (m.bands() - 1)) as f64
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn raster(r: &mut Rng, h: usize, w: usize, c: usize, lo: f64, hi: f64) -> Raster {
    Raster::new(h, w, c, (0..h * w * c).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

fn simplex(r: &mut Rng, h: usize, w: usize, p: usize) -> AbundanceMap {
    let n = h * w;
    let mut d = vec![0.0; p * n];
    for i in 0..n {
        let draws: Vec<f64> = (0..p).map(|_| r.random_range(0.01..1.0)).collect();
        let s: f64 = draws.iter().sum();
        for c in 0..p {
            d[c * n + i] = draws[c] / s;
        }
    }
    AbundanceMap::new(h, w, p, d).unwrap()
}

/// One line of the oracle report: worst deviation over all instances and the
/// tolerance it must meet.
pub struct OracleResult {
    pub name: &'static str,
    pub worst: f64,
    pub tol: f64,
}

impl OracleResult {
    pub fn passed(&self) -> bool {
        self.worst <= self.tol
    }
}

/// Runs every oracle comparison on `instances` random cases.
pub fn oracle_suite(instances: u64) -> Vec<OracleResult> {
    let mut out = Vec::new();
    let mut run = |name: &'static str, tol: f64, f: &dyn Fn(&mut Rng) -> f64| {
        let worst = (0..instances)
            .map(|s| f(&mut rng::stream(s, name)))
            .fold(0.0, f64::max);
        out.push(OracleResult { name, worst, tol });
    };

    run("conv2d", 1e-12, &|r| {
        let (c, o, k) = (r.random_range(1..4), r.random_range(1..4), [1, 3, 5][r.random_range(0..3)]);
        let pad = r.random_range(0..=k / 2);
        let (h, w) = (r.random_range(k..k + 6), r.random_range(k..k + 6));
        let x = rand_tensor(r, &[c, h, w], -1.0, 1.0);
        let kt = rand_tensor(r, &[o, c, k, k], -1.0, 1.0);
        let b: Vec<f64> = (0..o).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let (xv, kv, bv) = (
            g.constant(x.clone()),
            g.constant(kt.clone()),
            g.constant(Tensor::new(vec![o], b.clone()).unwrap()),
        );
        let y = g.conv2d(xv, kv, Some(bv), pad).unwrap();
        max_abs_diff(g.value(y).data(), &conv2d(&x, &kt, &b, pad))
    });

    run("conv_transpose2d", 1e-12, &|r| {
        let (c, o, k, s) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..5), r.random_range(1..4));
        let (h, w) = (r.random_range(1..6), r.random_range(1..6));
        let x = rand_tensor(r, &[c, h, w], -1.0, 1.0);
        let kt = rand_tensor(r, &[c, o, k, k], -1.0, 1.0);
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(kt.clone()));
        let y = g.conv_transpose2d(xv, kv, s).unwrap();
        max_abs_diff(g.value(y).data(), &conv_transpose2d(&x, &kt, s))
    });

    run("degrade", 1e-10, &|r| {
        let n = r.random_range(1..5);
        let (h, w) = (n * r.random_range(2..6), n * r.random_range(2..6));
        let bands = r.random_range(1..4);
        let hr = HsiCube::from_raster(raster(r, h, w, bands, 0.0, 1.0));
        let sigma = if r.random::<bool>() { 0.0 } else { r.random_range(0.3..2.0) };
        let lr = degrade(&hr, n, sigma, 0.0, 0).unwrap();
        max_abs_diff(lr.data(), &degrade_noiseless(&hr, n, sigma))
    });

    run("psnr", 1e-10, &|r| {
        let (h, w, c) = (r.random_range(2..8), r.random_range(2..8), r.random_range(1..5));
        let a = raster(r, h, w, c, 0.0, 1.0);
        let b = raster(r, h, w, c, 0.0, 1.0);
        (metrics::psnr(&a, &b).unwrap() - psnr(&a, &b)).abs()
    });

    run("ssim", 1e-10, &|r| {
        let (h, w, c) = (r.random_range(11..16), r.random_range(11..16), r.random_range(1..3));
        let a = raster(r, h, w, c, 0.0, 1.0);
        let b = raster(r, h, w, c, 0.0, 1.0);
        (metrics::ssim(&a, &b).unwrap() - ssim(&a, &b)).abs()
    });

    run("sam", 1e-8, &|r| {
        let (h, w, c) = (r.random_range(1..8), r.random_range(1..8), r.random_range(2..9));
        let a = raster(r, h, w, c, 0.0, 1.0);
        let b = raster(r, h, w, c, 0.0, 1.0);
        (metrics::sam(&a, &b).unwrap() - mean_angle(&a, &b).to_degrees()).abs()
    });

    run("ergas", 1e-10, &|r| {
        let (h, w, c) = (r.random_range(1..8), r.random_range(1..8), r.random_range(1..5));
        let a = raster(r, h, w, c, 0.05, 1.0);
        let b = raster(r, h, w, c, 0.0, 1.0);
        let n = r.random_range(1..9);
        (metrics::ergas(&a, &b, n).unwrap() - ergas(&a, &b, n)).abs()
    });

    run("unloss_l1", 1e-12, &|r| {
        let (h, w, c) = (r.random_range(1..8), r.random_range(1..8), r.random_range(1..6));
        let a = raster(r, h, w, c, 0.0, 1.0);
        let b = raster(r, h, w, c, 0.0, 1.0);
        (unloss_l1(&a, &b).unwrap() - mean_abs_diff(a.data(), b.data())).abs()
    });

    run("unloss_sad", 1e-10, &|r| {
        let (h, w, c) = (r.random_range(1..8), r.random_range(1..8), r.random_range(2..6));
        let a = raster(r, h, w, c, 0.0, 1.0);
        let b = raster(r, h, w, c, 0.0, 1.0);
        (unloss_sad(&a, &b).unwrap() - mean_angle(&a, &b)).abs()
    });

    run("unloss_tv", 1e-12, &|r| {
        let (p, bands) = (r.random_range(1..5), r.random_range(2..20));
        let m = EndmemberMatrix::new(p, bands, (0..p * bands).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
        (unloss_tv(&m).unwrap() - tv(&m)).abs()
    });

    run("unloss_total", 1e-12, &|r| {
        let (h, w, c) = (r.random_range(1..6), r.random_range(1..6), r.random_range(2..6));
        let a = raster(r, h, w, c, 0.0, 1.0);
        let b = raster(r, h, w, c, 0.0, 1.0);
        let m = EndmemberMatrix::new(2, c, (0..2 * c).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
        let total = unloss_total(&a, &b, &m, UnLossWeights::default()).unwrap().total;
        let expect = mean_abs_diff(a.data(), b.data()) + 0.1 * mean_angle(&a, &b) + 1e-3 * tv(&m);
        (total - expect).abs()
    });

    run("abun_loss", 1e-12, &|r| {
        let (h, w, p, n) = (r.random_range(1..5), r.random_range(1..5), r.random_range(2..5), r.random_range(1..4));
        let lr = simplex(r, h, w, p);
        let hr = simplex(r, h * n, w * n, p);
        let mut s = 0.0;
        for c in 0..p {
            for y in 0..h * n {
                for x in 0..w * n {
                    s += (hr.get(c, y, x) - lr.get(c, y / n, x / n)).abs();
                }
            }
        }
        (abun_loss(&hr, &lr, n).unwrap() - s / (p * h * w * n * n) as f64).abs()
    });

    run("sr_loss_total", 1e-12, &|r| {
        let (h, w, p, c, n) = (2, 3, 2, 4, 2);
        let y_hr = raster(r, h * n, w * n, c, 0.0, 1.0);
        let y_sr = raster(r, h * n, w * n, c, 0.0, 1.0);
        let a_lr = simplex(r, h, w, p);
        let a_sr = simplex(r, h * n, w * n, p);
        let mut ab = 0.0;
        for ch in 0..p {
            for y in 0..h * n {
                for x in 0..w * n {
                    ab += (a_sr.get(ch, y, x) - a_lr.get(ch, y / n, x / n)).abs();
                }
            }
        }
        ab /= (p * h * w * n * n) as f64;
        let expect = mean_abs_diff(y_hr.data(), y_sr.data()) + 0.1 * mean_angle(&y_hr, &y_sr) + 0.2 * ab;
        let got = sr_loss_total(&y_hr, &y_sr, &a_sr, &a_lr, n, SrLossWeights::default()).unwrap();
        (got.total - expect).abs()
    });

    out
}
