use crate::{EngineError, Float, Result};

/// Geometry of a 2-D convolution over NCHW tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dCfg {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dCfg {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
            groups: 1,
        }
    }
}

impl Conv2dCfg {
    /// Stride-1 convolution padded so the output keeps the input size.
    pub fn same(kh: usize, kw: usize) -> Self {
        Self::same_dilated(kh, kw, 1)
    }

    pub fn same_dilated(kh: usize, kw: usize, dilation: usize) -> Self {
        Self {
            padding: (dilation * (kh - 1) / 2, dilation * (kw - 1) / 2),
            dilation: (dilation, dilation),
            ..Self::default()
        }
    }

    pub fn with_stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn with_padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    pub fn with_groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub cfg: Conv2dCfg,
}

impl ConvGeom {
    pub fn new(x: &[usize], wt: &[usize], cfg: Conv2dCfg) -> Result<Self> {
        if x.len() != 4 || wt.len() != 4 {
            return Err(EngineError::Shape(format!(
                "conv2d expects NCHW input and OIHW weight, got {x:?} and {wt:?}"
            )));
        }
        let (n, c, h, w) = (x[0], x[1], x[2], x[3]);
        let (o, cg, kh, kw) = (wt[0], wt[1], wt[2], wt[3]);
        let g = cfg.groups;
        if g == 0 || c % g != 0 || o % g != 0 || cg != c / g {
            return Err(EngineError::Shape(format!(
                "conv2d groups={g} incompatible with {c} input channels and weight {wt:?}"
            )));
        }
        if cfg.stride.0 == 0 || cfg.stride.1 == 0 || cfg.dilation.0 == 0 || cfg.dilation.1 == 0 {
            return Err(EngineError::Shape("conv2d stride and dilation must be >= 1".into()));
        }
        let eff_h = cfg.dilation.0 * (kh - 1) + 1;
        let eff_w = cfg.dilation.1 * (kw - 1) + 1;
        if h + 2 * cfg.padding.0 < eff_h || w + 2 * cfg.padding.1 < eff_w {
            return Err(EngineError::Shape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {h}x{w}"
            )));
        }
        let ho = (h + 2 * cfg.padding.0 - eff_h) / cfg.stride.0 + 1;
        let wo = (w + 2 * cfg.padding.1 - eff_w) / cfg.stride.1 + 1;
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            ho,
            wo,
            cfg,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.o, self.ho, self.wo]
    }

    fn cg(&self) -> usize {
        self.c / self.cfg.groups
    }

    fn og(&self) -> usize {
        self.o / self.cfg.groups
    }

    fn k(&self) -> usize {
        self.cg() * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.cfg.stride == (1, 1)
            && self.cfg.padding == (0, 0)
            && self.cfg.groups == 1
    }

    fn is_depthwise(&self) -> bool {
        self.cfg.groups == self.c && self.o == self.c
    }

    /// Multiply-adds times two, plus one add per output element for bias.
    pub fn flops(&self, bias: bool) -> u64 {
        let out = (self.n * self.o * self.p()) as u64;
        let macs = out * (self.cg() * self.kh * self.kw) as u64;
        2 * macs + if bias { out } else { 0 }
    }

    /// Maps output position + kernel tap to an input coordinate, if inside.
    #[inline]
    fn src(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> Option<(usize, usize)> {
        let y = (oy * self.cfg.stride.0 + ki * self.cfg.dilation.0) as isize - self.cfg.padding.0 as isize;
        let x = (ox * self.cfg.stride.1 + kj * self.cfg.dilation.1) as isize - self.cfg.padding.1 as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }

    fn im2col<F: Float>(&self, x: &[F], cols: &mut [F]) {
        let p = self.p();
        for c in 0..self.cg() {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = &mut cols[((c * self.kh + ki) * self.kw + kj) * p..][..p];
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            row[oy * self.wo + ox] = match self.src(oy, ox, ki, kj) {
                                Some((y, xx)) => plane[y * self.w + xx],
                                None => F::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<F: Float>(&self, cols: &[F], dx: &mut [F]) {
        let p = self.p();
        for c in 0..self.cg() {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = &cols[((c * self.kh + ki) * self.kw + kj) * p..][..p];
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            if let Some((y, xx)) = self.src(oy, ox, ki, kj) {
                                plane[y * self.w + xx] += row[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<F: Float>(
    g: &ConvGeom,
    x: &[F],
    wt: &[F],
    bias: Option<&[F]>,
) -> Vec<F> {
    let (p, k, cg, og) = (g.p(), g.k(), g.cg(), g.og());
    let mut out = vec![F::zero(); g.n * g.o * p];
    let in_plane = g.h * g.w;
    if g.is_depthwise() && g.cfg.groups > 1 {
        for n in 0..g.n {
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * in_plane..][..in_plane];
                let kern = &wt[c * g.kh * g.kw..][..g.kh * g.kw];
                let dst = &mut out[(n * g.o + c) * p..][..p];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let wv = kern[ki * g.kw + kj];
                        for oy in 0..g.ho {
                            for ox in 0..g.wo {
                                if let Some((y, xx)) = g.src(oy, ox, ki, kj) {
                                    dst[oy * g.wo + ox] += wv * src[y * g.w + xx];
                                }
                            }
                        }
                    }
                }
            }
        }
    } else {
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![F::zero(); k * p]
        };
        for n in 0..g.n {
            for gi in 0..g.cfg.groups {
                let xs = &x[(n * g.c + gi * cg) * in_plane..][..cg * in_plane];
                let b: &[F] = if g.is_pointwise() {
                    xs
                } else {
                    g.im2col(xs, &mut cols);
                    &cols
                };
                let a = &wt[gi * og * k..][..og * k];
                let c = &mut out[(n * g.o + gi * og) * p..][..og * p];
                // SAFETY: slices above cover og×k, k×p and og×p row-major views.
                unsafe {
                    F::gemm(
                        og,
                        k,
                        p,
                        F::one(),
                        a.as_ptr(),
                        k as isize,
                        1,
                        b.as_ptr(),
                        p as isize,
                        1,
                        F::zero(),
                        c.as_mut_ptr(),
                        p as isize,
                        1,
                    );
                }
            }
        }
    }
    if let Some(b) = bias {
        for n in 0..g.n {
            for o in 0..g.o {
                let bv = b[o];
                for v in &mut out[(n * g.o + o) * p..][..p] {
                    *v += bv;
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<F> {
    pub dx: Option<Vec<F>>,
    pub dw: Option<Vec<F>>,
    pub db: Option<Vec<F>>,
}

pub(crate) fn conv2d_backward<F: Float>(
    g: &ConvGeom,
    x: &[F],
    wt: &[F],
    dy: &[F],
    need: (bool, bool, bool),
) -> ConvGrads<F> {
    let (p, k, cg, og) = (g.p(), g.k(), g.cg(), g.og());
    let in_plane = g.h * g.w;
    let mut dx = need.0.then(|| vec![F::zero(); x.len()]);
    let mut dw = need.1.then(|| vec![F::zero(); wt.len()]);
    let db = need.2.then(|| {
        let mut db = vec![F::zero(); g.o];
        for n in 0..g.n {
            for (o, acc) in db.iter_mut().enumerate() {
                for &v in &dy[(n * g.o + o) * p..][..p] {
                    *acc += v;
                }
            }
        }
        db
    });
    if !(need.0 || need.1) {
        return ConvGrads { dx, dw, db };
    }

    if g.is_depthwise() && g.cfg.groups > 1 {
        for n in 0..g.n {
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * in_plane..][..in_plane];
                let gy = &dy[(n * g.o + c) * p..][..p];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let widx = c * g.kh * g.kw + ki * g.kw + kj;
                        let wv = wt[widx];
                        let mut acc = F::zero();
                        for oy in 0..g.ho {
                            for ox in 0..g.wo {
                                if let Some((y, xx)) = g.src(oy, ox, ki, kj) {
                                    let gv = gy[oy * g.wo + ox];
                                    acc += gv * src[y * g.w + xx];
                                    if let Some(dx) = dx.as_mut() {
                                        dx[(n * g.c + c) * in_plane + y * g.w + xx] += gv * wv;
                                    }
                                }
                            }
                        }
                        if let Some(dw) = dw.as_mut() {
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
        return ConvGrads { dx, dw, db };
    }

    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![F::zero(); k * p] };
    let mut dcols = if need.0 { vec![F::zero(); k * p] } else { Vec::new() };
    for n in 0..g.n {
        for gi in 0..g.cfg.groups {
            let xs = &x[(n * g.c + gi * cg) * in_plane..][..cg * in_plane];
            let gy = &dy[(n * g.o + gi * og) * p..][..og * p];
            if let Some(dw) = dw.as_mut() {
                let b: &[F] = if pointwise {
                    xs
                } else {
                    g.im2col(xs, &mut cols);
                    &cols
                };
                let dwg = &mut dw[gi * og * k..][..og * k];
                // dW (og×k) += dY (og×p) · colsᵀ (p×k)
                unsafe {
                    F::gemm(
                        og,
                        p,
                        k,
                        F::one(),
                        gy.as_ptr(),
                        p as isize,
                        1,
                        b.as_ptr(),
                        1,
                        p as isize,
                        F::one(),
                        dwg.as_mut_ptr(),
                        k as isize,
                        1,
                    );
                }
            }
            if let Some(dx) = dx.as_mut() {
                let a = &wt[gi * og * k..][..og * k];
                let target: &mut [F] = if pointwise {
                    &mut dx[(n * g.c + gi * cg) * in_plane..][..cg * in_plane]
                } else {
                    &mut dcols
                };
                // dcols (k×p) = Wᵀ (k×og) · dY (og×p)
                unsafe {
                    F::gemm(
                        k,
                        og,
                        p,
                        F::one(),
                        a.as_ptr(),
                        1,
                        k as isize,
                        gy.as_ptr(),
                        p as isize,
                        1,
                        if pointwise { F::one() } else { F::zero() },
                        target.as_mut_ptr(),
                        p as isize,
                        1,
                    );
                }
                if !pointwise {
                    g.col2im(&dcols, &mut dx[(n * g.c + gi * cg) * in_plane..][..cg * in_plane]);
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}
