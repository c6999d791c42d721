//! Object motion and observation model, and the synthetic video generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::halfnum::OpCounters;
use crate::precision::Lane;

/// Parameters shared by the video generator and the filter.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Mean displacement per frame along x, pixels.
    pub drift_x: f64,
    /// Transition standard deviation along x, pixels.
    pub std_x: f64,
    pub drift_y: f64,
    pub std_y: f64,
    /// Background intensity.
    pub bg_mean: f64,
    /// Foreground (object) intensity.
    pub fg_mean: f64,
    /// Denominator scale of the likelihood: `scale * N`.
    pub likelihood_scale: f64,
    pub disk_radius: u32,
    /// Gaussian pixel noise in intensity units. Zero renders clean frames.
    pub noise_std: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            drift_x: 1.0,
            std_x: 5.0,
            drift_y: 2.0,
            std_y: 2.0,
            bg_mean: 100.0,
            fg_mean: 228.0,
            likelihood_scale: 50.0,
            disk_radius: 5,
            noise_std: 5.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !(self.std_x > 0.0 && self.std_y > 0.0) {
            return bad("transition standard deviations must be positive");
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative");
        }
        if self.bg_mean == self.fg_mean {
            return bad("background and foreground intensities must differ");
        }
        if !(self.likelihood_scale > 0.0) {
            return bad("likelihood_scale must be positive");
        }
        if self.disk_radius < 1 {
            return bad("disk_radius must be at least 1");
        }
        Ok(())
    }
}

/// One monochrome 8-bit frame, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "frame of {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Frame {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Reads the pixel at `(x, y)`, clamping coordinates to the border.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> u8 {
        let cx = x.clamp(0, self.width as i64 - 1) as usize;
        let cy = y.clamp(0, self.height as i64 - 1) as usize;
        self.get(cx, cy)
    }
}

/// Frame sequence with the object's true center for each frame. `truth` is
/// empty when the center is unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub frames: Vec<Frame>,
    pub truth: Vec<(f64, f64)>,
}

impl Video {
    pub fn new(frames: Vec<Frame>, truth: Vec<(f64, f64)>) -> Result<Self> {
        if !truth.is_empty() && frames.len() != truth.len() {
            return Err(Error::InvalidArgument(format!(
                "{} frames but {} ground-truth rows",
                frames.len(),
                truth.len()
            )));
        }
        if let Some(first) = frames.first() {
            if frames
                .iter()
                .any(|f| f.width != first.width || f.height != first.height)
            {
                return Err(Error::InvalidArgument("frames differ in size".into()));
            }
        }
        Ok(Video { frames, truth })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.width)
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.height)
    }
}

/// Pixel offsets sampled around a particle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelTemplate {
    offsets: Vec<(i32, i32)>,
}

impl PixelTemplate {
    /// Offsets strictly inside a circle of `radius`, in row-major order.
    /// Radius 5 gives 69 pixels, radius 1 the center pixel alone.
    pub fn disk(radius: u32) -> Self {
        let r = radius as i32;
        let mut offsets = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy < r * r {
                    offsets.push((dx, dy));
                }
            }
        }
        PixelTemplate { offsets }
    }

    pub fn from_offsets(offsets: Vec<(i32, i32)>) -> Result<Self> {
        if !offsets.contains(&(0, 0)) {
            return Err(Error::InvalidArgument(
                "template must contain (0, 0)".into(),
            ));
        }
        if offsets
            .iter()
            .any(|&(dx, dy)| !offsets.contains(&(-dx, -dy)))
        {
            return Err(Error::InvalidArgument(
                "template must be point-symmetric".into(),
            ));
        }
        Ok(PixelTemplate { offsets })
    }

    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// One axis of specular motion inside `[0, max]`.
pub fn reflect_step(pos: f64, vel: f64, max: f64) -> (f64, f64) {
    if max <= 0.0 {
        return (0.0, vel);
    }
    let mut p = pos + vel;
    let mut v = vel;
    while p < 0.0 || p > max {
        if p < 0.0 {
            p = -p;
        } else {
            p = 2.0 * max - p;
        }
        v = -v;
    }
    (p, v)
}

/// Renders a video of a disk moving with constant velocity
/// `(drift_x, drift_y)` and bouncing off the frame borders.
pub fn generate_video(
    params: &ModelParams,
    frames: usize,
    width: usize,
    height: usize,
    start: (f64, f64),
    seed: u64,
) -> Result<Video> {
    params.validate()?;
    if frames == 0 || width == 0 || height == 0 {
        return Err(Error::InvalidArgument(
            "frames, width and height must be at least 1".into(),
        ));
    }
    let (max_x, max_y) = ((width - 1) as f64, (height - 1) as f64);
    if !(0.0..=max_x).contains(&start.0) || !(0.0..=max_y).contains(&start.1) {
        return Err(Error::InvalidArgument(format!(
            "start ({}, {}) outside the {width}x{height} frame",
            start.0, start.1
        )));
    }

    let mut truth = Vec::with_capacity(frames);
    let (mut x, mut y) = start;
    let (mut vx, mut vy) = (params.drift_x, params.drift_y);
    for _ in 0..frames {
        truth.push((x, y));
        (x, vx) = reflect_step(x, vx, max_x);
        (y, vy) = reflect_step(y, vy, max_y);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r2 = f64::from(params.disk_radius).powi(2);
    let out = truth
        .iter()
        .map(|&(cx, cy)| {
            let mut pixels = Vec::with_capacity(width * height);
            for row in 0..height {
                for col in 0..width {
                    let d2 = (col as f64 - cx).powi(2) + (row as f64 - cy).powi(2);
                    let base = if d2 < r2 {
                        params.fg_mean
                    } else {
                        params.bg_mean
                    };
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let v = base + params.noise_std * noise;
                    pixels.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
            Frame {
                width,
                height,
                pixels,
            }
        })
        .collect();

    Video::new(out, truth)
}

/// Integer pixel the template is centered on for a particle at `pos`.
#[inline]
pub fn pixel_center(pos: f64) -> i64 {
    pos.round() as i64
}

/// Which algebraic form of the likelihood to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LikelihoodForm {
    /// `sum((I-bg)^2 - (I-fg)^2) / (scale*N)`: accumulate, then divide.
    Direct,
    /// `sum(((I-bg)/sqrt(scale*N))^2 - ((I-fg)/sqrt(scale*N))^2)`.
    Stabilized,
}

/// Likelihood constants converted to a lane type.
#[derive(Clone, Copy, Debug)]
pub struct LikelihoodConsts<P: Lane> {
    pub bg: P,
    pub fg: P,
    /// `scale * N`
    pub denom: P,
    /// `1 / sqrt(scale * N)`
    pub inv_sqrt_denom: P,
}

impl<P: Lane> LikelihoodConsts<P> {
    pub fn new(params: &ModelParams, template_len: usize, ctx: &mut OpCounters) -> Self {
        let denom = params.likelihood_scale * template_len as f64;
        let s = |x: f64, ctx: &mut OpCounters| P::splat(<P::Scalar as Lane>::narrow(x, ctx));
        LikelihoodConsts {
            bg: s(params.bg_mean, ctx),
            fg: s(params.fg_mean, ctx),
            denom: s(denom, ctx),
            inv_sqrt_denom: s(1.0 / denom.sqrt(), ctx),
        }
    }
}

/// Direct form over a sequence of intensities.
pub fn accumulate_direct<P: Lane>(
    intensities: impl IntoIterator<Item = P>,
    c: &LikelihoodConsts<P>,
    ctx: &mut OpCounters,
) -> P {
    let mut num = P::zero();
    for i in intensities {
        let a = i.sub(c.bg, ctx);
        let b = i.sub(c.fg, ctx);
        let t = a.mul(a, ctx).sub(b.mul(b, ctx), ctx);
        num = num.add(t, ctx);
    }
    num.div(c.denom, ctx)
}

/// Stabilized form: each difference is scaled before it is squared, so the
/// running sum stays within a few hundred for any 8-bit input.
pub fn accumulate_stabilized<P: Lane>(
    intensities: impl IntoIterator<Item = P>,
    c: &LikelihoodConsts<P>,
    ctx: &mut OpCounters,
) -> P {
    let mut acc = P::zero();
    for i in intensities {
        let a = i.sub(c.bg, ctx).mul(c.inv_sqrt_denom, ctx);
        let b = i.sub(c.fg, ctx).mul(c.inv_sqrt_denom, ctx);
        let t = a.mul(a, ctx).sub(b.mul(b, ctx), ctx);
        acc = acc.add(t, ctx);
    }
    acc
}

fn template_intensities<'a>(
    frame: &'a Frame,
    pos: (f64, f64),
    template: &'a PixelTemplate,
) -> impl Iterator<Item = f64> + 'a {
    let (cx, cy) = (pixel_center(pos.0), pixel_center(pos.1));
    template
        .offsets()
        .iter()
        .map(move |&(dx, dy)| f64::from(frame.get_clamped(cx + i64::from(dx), cy + i64::from(dy))))
}

/// Log-likelihood of the template around `pos`, direct form, in `f64`.
pub fn log_likelihood(
    frame: &Frame,
    pos: (f64, f64),
    template: &PixelTemplate,
    params: &ModelParams,
) -> f64 {
    let mut ctx = OpCounters::new();
    let c = LikelihoodConsts::<f64>::new(params, template.len(), &mut ctx);
    accumulate_direct(template_intensities(frame, pos, template), &c, &mut ctx)
}

/// Same quantity as [`log_likelihood`], stabilized form, in `f64`.
pub fn stabilized_log_likelihood(
    frame: &Frame,
    pos: (f64, f64),
    template: &PixelTemplate,
    params: &ModelParams,
) -> f64 {
    let mut ctx = OpCounters::new();
    let c = LikelihoodConsts::<f64>::new(params, template.len(), &mut ctx);
    accumulate_stabilized(template_intensities(frame, pos, template), &c, &mut ctx)
}

/// Transition of one particle given standard-normal draws `noise`.
pub fn propagate_one(pos: (f64, f64), noise: (f64, f64), params: &ModelParams) -> (f64, f64) {
    (
        pos.0 + params.drift_x + params.std_x * noise.0,
        pos.1 + params.drift_y + params.std_y * noise.1,
    )
}
