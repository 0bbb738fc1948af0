//! Binary masks and RGB rasters with the pixel operations the rest of the
//! crate builds on: boolean combinations, morphology, connected components,
//! nearest-neighbor rotation/scaling and bilinear appearance resampling.
//!
//! Coordinates are origin top-left, x right, y down. A pixel (x, y) covers
//! the unit square [x, x+1) x [y, y+1); its sampling center is (x+0.5, y+0.5).

use rand::Rng;

/// Binary raster. Pixels hold 0 or 1.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width >= 1 && height >= 1, "mask dimensions must be >= 1");
        Mask { width, height, data: vec![0; (width * height) as usize] }
    }

    pub fn filled(width: u32, height: u32) -> Self {
        let mut m = Mask::new(width, height);
        m.data.fill(1);
        m
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = Mask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.data[(y * width + x) as usize] = 1;
                }
            }
        }
        m
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), (width * height) as usize);
        assert!(data.iter().all(|&v| v <= 1), "mask values must be 0 or 1");
        Mask { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.data[(y * self.width + x) as usize] != 0
    }

    /// Like `get` but returns false outside the raster.
    #[inline]
    pub fn get_clipped(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return false;
        }
        self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        debug_assert!(x < self.width && y < self.height);
        self.data[(y * self.width + x) as usize] = v as u8;
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Iterator over set pixel coordinates in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(move |(i, _)| ((i as u32) % w, (i as u32) / w))
    }

    /// Integer centroid of the set pixels (rounded), or None if empty.
    pub fn centroid(&self) -> Option<(u32, u32)> {
        let mut sx = 0u64;
        let mut sy = 0u64;
        let mut n = 0u64;
        for (x, y) in self.iter_set() {
            sx += x as u64;
            sy += y as u64;
            n += 1;
        }
        (n > 0).then(|| (((sx + n / 2) / n) as u32, ((sy + n / 2) / n) as u32))
    }

    /// Tight bounds of the set pixels as (x, y, w, h), or None if empty.
    pub fn tight_bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let mut min_x = u32::MAX;
        let mut min_y = u32::MAX;
        let mut max_x = 0u32;
        let mut max_y = 0u32;
        let mut any = false;
        for (x, y) in self.iter_set() {
            any = true;
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
        }
        any.then(|| (min_x, min_y, max_x - min_x + 1, max_y - min_y + 1))
    }

    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Mask {
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        let mut out = Mask::new(w, h);
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) as usize;
            let dst = (y * w) as usize;
            out.data[dst..dst + w as usize].copy_from_slice(&self.data[src..src + w as usize]);
        }
        out
    }

    pub fn union_in_place(&mut self, other: &Mask) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    pub fn intersect(&self, other: &Mask) -> Mask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a & b).collect();
        Mask { width: self.width, height: self.height, data }
    }

    pub fn intersection_count(&self, other: &Mask) -> u64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.data.iter().zip(&other.data).map(|(a, b)| (a & b) as u64).sum()
    }

    pub fn union_count(&self, other: &Mask) -> u64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.data.iter().zip(&other.data).map(|(a, b)| (a | b) as u64).sum()
    }

    /// Intersection-over-union of two same-sized masks; None when both empty.
    pub fn iou(&self, other: &Mask) -> Option<f64> {
        let u = self.union_count(other);
        (u > 0).then(|| self.intersection_count(other) as f64 / u as f64)
    }

    /// Stamp `patch` into self with its top-left at (ox, oy); pixels falling
    /// outside self are ignored.
    pub fn blit(&mut self, patch: &Mask, ox: i32, oy: i32) {
        for (px, py) in patch.iter_set() {
            let x = ox as i64 + px as i64;
            let y = oy as i64 + py as i64;
            if x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height {
                self.set(x as u32, y as u32, true);
            }
        }
    }

    /// Count of overlapping set pixels between two placed patches.
    pub fn overlap_count(&self, off_a: (i32, i32), other: &Mask, off_b: (i32, i32)) -> u64 {
        // Work in the intersection of the two placed rectangles.
        let ax0 = off_a.0 as i64;
        let ay0 = off_a.1 as i64;
        let bx0 = off_b.0 as i64;
        let by0 = off_b.1 as i64;
        let x0 = ax0.max(bx0);
        let y0 = ay0.max(by0);
        let x1 = (ax0 + self.width as i64).min(bx0 + other.width as i64);
        let y1 = (ay0 + self.height as i64).min(by0 + other.height as i64);
        if x0 >= x1 || y0 >= y1 {
            return 0;
        }
        let mut n = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                if self.get((x - ax0) as u32, (y - ay0) as u32)
                    && other.get((x - bx0) as u32, (y - by0) as u32)
                {
                    n += 1;
                }
            }
        }
        n
    }

    /// One morphological step (4-neighborhood, out-of-bounds counts as
    /// background). `grow` dilates, else erodes.
    fn morph_step(&self, grow: bool) -> Mask {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                let (xi, yi) = (x as i64, y as i64);
                let neighbors = [(xi - 1, yi), (xi + 1, yi), (xi, yi - 1), (xi, yi + 1)];
                if grow && !v {
                    if neighbors.into_iter().any(|(nx, ny)| self.get_clipped(nx, ny)) {
                        out.set(x, y, true);
                    }
                } else if !grow && v {
                    if neighbors.into_iter().any(|(nx, ny)| !self.get_clipped(nx, ny)) {
                        out.set(x, y, false);
                    }
                }
            }
        }
        out
    }

    pub fn dilate(&self, steps: u32) -> Mask {
        let mut m = self.clone();
        for _ in 0..steps {
            m = m.morph_step(true);
        }
        m
    }

    pub fn erode(&self, steps: u32) -> Mask {
        let mut m = self.clone();
        for _ in 0..steps {
            m = m.morph_step(false);
        }
        m
    }

    /// Fractional morphology: `amount.floor()` full steps plus one partial
    /// step in which each boundary pixel flips with probability `fract`.
    /// Pixel visit order is row-major, so the result is deterministic in the
    /// RNG state.
    pub fn morph_fractional(&self, amount: f64, grow: bool, rng: &mut impl Rng) -> Mask {
        assert!(amount >= 0.0);
        let whole = amount.floor() as u32;
        let fract = amount - amount.floor();
        let mut m = if grow { self.dilate(whole) } else { self.erode(whole) };
        if fract > 0.0 {
            let full = m.morph_step(grow);
            let mut out = m.clone();
            for y in 0..m.height {
                for x in 0..m.width {
                    if full.get(x, y) != m.get(x, y) && rng.random_bool(fract) {
                        out.set(x, y, full.get(x, y));
                    }
                }
            }
            m = out;
        }
        m
    }

    /// Label 4-connected components of set pixels. Returns (labels, count);
    /// labels are 1-based, 0 marks background. Components are numbered in
    /// row-major order of their first pixel.
    pub fn connected_components(&self) -> (Vec<u32>, u32) {
        let mut labels = vec![0u32; self.data.len()];
        let mut next = 0u32;
        let mut queue = std::collections::VecDeque::new();
        for start in 0..self.data.len() {
            if self.data[start] == 0 || labels[start] != 0 {
                continue;
            }
            next += 1;
            labels[start] = next;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                let x = (i as u32) % self.width;
                let y = (i as u32) / self.width;
                let mut push = |nx: i64, ny: i64, queue: &mut std::collections::VecDeque<usize>| {
                    if nx >= 0 && ny >= 0 && nx < self.width as i64 && ny < self.height as i64 {
                        let j = (ny as u32 * self.width + nx as u32) as usize;
                        if self.data[j] != 0 && labels[j] == 0 {
                            labels[j] = next;
                            queue.push_back(j);
                        }
                    }
                };
                push(x as i64 - 1, y as i64, &mut queue);
                push(x as i64 + 1, y as i64, &mut queue);
                push(x as i64, y as i64 - 1, &mut queue);
                push(x as i64, y as i64 + 1, &mut queue);
            }
        }
        (labels, next)
    }
}

/// 3-channel 8-bit raster, row-major, stride 3.
#[derive(Clone, PartialEq, Eq)]
pub struct Rgb {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for Rgb {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Rgb({}x{})", self.width, self.height)
    }
}

impl Rgb {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        assert!(width >= 1 && height >= 1);
        let mut data = Vec::with_capacity((width * height * 3) as usize);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Rgb { width, height, data }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), (width * height * 3) as usize);
        Rgb { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, px: [u8; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Rgb {
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        let mut out = Rgb::new(w, h, [0, 0, 0]);
        for y in 0..h {
            let src = (((y0 + y) * self.width + x0) * 3) as usize;
            let dst = (y * w * 3) as usize;
            out.data[dst..dst + (w * 3) as usize]
                .copy_from_slice(&self.data[src..src + (w * 3) as usize]);
        }
        out
    }

    /// Copy `patch` pixels selected by `mask` into self at (ox, oy).
    pub fn blit_masked(&mut self, patch: &Rgb, mask: &Mask, ox: i32, oy: i32) {
        for (px, py) in mask.iter_set() {
            let x = ox as i64 + px as i64;
            let y = oy as i64 + py as i64;
            if x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height {
                self.set(x as u32, y as u32, patch.get(px, py));
            }
        }
    }

    /// Bilinear sample at continuous coordinates (in pixel-edge space, so the
    /// center of pixel (0,0) is at (0.5, 0.5)). Coordinates are clamped.
    pub fn sample_bilinear(&self, sx: f64, sy: f64) -> [u8; 3] {
        let u = sx - 0.5;
        let v = sy - 0.5;
        let x0 = u.floor();
        let y0 = v.floor();
        let fx = u - x0;
        let fy = v - y0;
        let clamp_x = |x: f64| (x.max(0.0) as u32).min(self.width - 1);
        let clamp_y = |y: f64| (y.max(0.0) as u32).min(self.height - 1);
        let (x0c, x1c) = (clamp_x(x0), clamp_x(x0 + 1.0));
        let (y0c, y1c) = (clamp_y(y0), clamp_y(y0 + 1.0));
        let p00 = self.get(x0c, y0c);
        let p10 = self.get(x1c, y0c);
        let p01 = self.get(x0c, y1c);
        let p11 = self.get(x1c, y1c);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
            let bot = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
            out[c] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
        }
        out
    }
}

/// How appearance pixels are resampled during a geometric transform.
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum ColorSampling {
    Nearest,
    Bilinear,
}

/// Inverse pixel map of a rotation: for every destination pixel yields the
/// continuous source coordinate. Rotations by multiples of 90 degrees use an
/// exact index permutation so they are lossless.
struct RotationMap {
    out_w: u32,
    out_h: u32,
    exact: Option<u16>, // 90/180/270 fast path
    cos: f64,
    sin: f64,
    src_w: u32,
    src_h: u32,
}

impl RotationMap {
    fn new(src_w: u32, src_h: u32, deg: u16) -> Self {
        let deg = deg % 360;
        if deg % 90 == 0 {
            let (out_w, out_h) = if deg % 180 == 0 { (src_w, src_h) } else { (src_h, src_w) };
            return RotationMap { out_w, out_h, exact: Some(deg), cos: 0.0, sin: 0.0, src_w, src_h };
        }
        let th = (deg as f64).to_radians();
        let (sin, cos) = th.sin_cos();
        let w = src_w as f64;
        let h = src_h as f64;
        let out_w = (w * cos.abs() + h * sin.abs()).ceil() as u32 + 2;
        let out_h = (w * sin.abs() + h * cos.abs()).ceil() as u32 + 2;
        RotationMap { out_w, out_h, exact: None, cos, sin, src_w, src_h }
    }

    /// Continuous source coordinate for destination pixel (x, y), or an exact
    /// integer source pixel on the 90-degree paths.
    fn source(&self, x: u32, y: u32) -> SourceCoord {
        match self.exact {
            Some(0) => SourceCoord::Exact(x as i64, y as i64),
            Some(90) => SourceCoord::Exact(y as i64, self.src_h as i64 - 1 - x as i64),
            Some(180) => SourceCoord::Exact(
                self.src_w as i64 - 1 - x as i64,
                self.src_h as i64 - 1 - y as i64,
            ),
            Some(270) => SourceCoord::Exact(self.src_w as i64 - 1 - y as i64, x as i64),
            Some(_) => unreachable!(),
            None => {
                let qx = x as f64 + 0.5 - self.out_w as f64 / 2.0;
                let qy = y as f64 + 0.5 - self.out_h as f64 / 2.0;
                let sx = self.cos * qx + self.sin * qy + self.src_w as f64 / 2.0;
                let sy = -self.sin * qx + self.cos * qy + self.src_h as f64 / 2.0;
                SourceCoord::Continuous(sx, sy)
            }
        }
    }
}

enum SourceCoord {
    Exact(i64, i64),
    Continuous(f64, f64),
}

/// Sub-pixel sample offsets for coverage estimation (4x4 grid).
const SS: u32 = 4;

/// Fractional coverage (0..=SS*SS) of the rotated source mask over one
/// destination pixel, on the general-angle path.
fn coverage_at(map: &RotationMap, src: &Mask, x: u32, y: u32) -> u32 {
    let mut hits = 0;
    for sy in 0..SS {
        for sx in 0..SS {
            let qx = x as f64 + (sx as f64 + 0.5) / SS as f64 - map.out_w as f64 / 2.0;
            let qy = y as f64 + (sy as f64 + 0.5) / SS as f64 - map.out_h as f64 / 2.0;
            let px = map.cos * qx + map.sin * qy + map.src_w as f64 / 2.0;
            let py = -map.sin * qx + map.cos * qy + map.src_h as f64 / 2.0;
            if src.get_clipped(px.floor() as i64, py.floor() as i64) {
                hits += 1;
            }
        }
    }
    hits
}

/// Rotate a binary mask by `deg` (clockwise on screen, y-down), returning
/// the uncropped canvas. Multiples of 90 degrees are exact permutations.
/// Other angles estimate per-pixel coverage on a sub-pixel grid and
/// rebinarize keeping exactly the source pixel count, so the count is
/// invariant under rotation by construction (ties break in row-major
/// order). Accumulated rotations are always computed from the canonical
/// mask at the total angle, never iteratively.
fn rotate_mask_canvas(src: &Mask, map: &RotationMap) -> Mask {
    let mut out = Mask::new(map.out_w, map.out_h);
    if map.exact.is_some() {
        for y in 0..map.out_h {
            for x in 0..map.out_w {
                if let SourceCoord::Exact(sx, sy) = map.source(x, y) {
                    if src.get_clipped(sx, sy) {
                        out.set(x, y, true);
                    }
                }
            }
        }
        return out;
    }
    let mut ranked: Vec<(u32, u32, u32)> = Vec::new();
    for y in 0..map.out_h {
        for x in 0..map.out_w {
            let c = coverage_at(map, src, x, y);
            if c > 0 {
                ranked.push((c, y, x));
            }
        }
    }
    // Highest coverage first; row-major among equals.
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let target = src.count() as usize;
    for &(_, y, x) in ranked.iter().take(target) {
        out.set(x, y, true);
    }
    out
}

/// Jointly rotated mask + appearance + extra channel masks, tight-cropped.
/// All outputs share a single canvas and crop so they stay aligned.
pub struct RotatedPatch {
    pub mask: Mask,
    pub appearance: Rgb,
    pub channels: Vec<Mask>,
}

pub fn rotate_patch(
    mask: &Mask,
    appearance: &Rgb,
    channels: &[&Mask],
    deg: u16,
    sampling: ColorSampling,
) -> RotatedPatch {
    assert_eq!((mask.width, mask.height), (appearance.width, appearance.height));
    let map = RotationMap::new(mask.width, mask.height, deg % 360);
    let canvas = rotate_mask_canvas(mask, &map);
    let (bx, by, bw, bh) = canvas.tight_bbox().unwrap_or((0, 0, 1, 1));
    let mut out_mask = Mask::new(bw, bh);
    let mut out_app = Rgb::new(bw, bh, [0, 0, 0]);
    let mut out_ch: Vec<Mask> = channels.iter().map(|_| Mask::new(bw, bh)).collect();
    for y in 0..bh {
        for x in 0..bw {
            if !canvas.get(bx + x, by + y) {
                continue;
            }
            out_mask.set(x, y, true);
            match map.source(bx + x, by + y) {
                SourceCoord::Exact(sx, sy) => {
                    out_app.set(x, y, appearance.get(sx as u32, sy as u32));
                    for (k, ch) in channels.iter().enumerate() {
                        if ch.get_clipped(sx, sy) {
                            out_ch[k].set(x, y, true);
                        }
                    }
                }
                SourceCoord::Continuous(sx, sy) => {
                    let px = match sampling {
                        ColorSampling::Bilinear => appearance.sample_bilinear(sx, sy),
                        ColorSampling::Nearest => {
                            let ix = (sx.floor() as i64).clamp(0, mask.width as i64 - 1) as u32;
                            let iy = (sy.floor() as i64).clamp(0, mask.height as i64 - 1) as u32;
                            appearance.get(ix, iy)
                        }
                    };
                    out_app.set(x, y, px);
                    for (k, ch) in channels.iter().enumerate() {
                        // Majority coverage keeps thin channels (rims) intact
                        // without letting them escape the rotated mask.
                        if coverage_at(&map, ch, bx + x, by + y) * 2 >= SS * SS {
                            out_ch[k].set(x, y, true);
                        }
                    }
                }
            }
        }
    }
    RotatedPatch { mask: out_mask, appearance: out_app, channels: out_ch }
}

/// Nearest-neighbor rescale of a mask to (nw, nh). Identity when sizes match.
pub fn scale_mask(src: &Mask, nw: u32, nh: u32) -> Mask {
    if (nw, nh) == (src.width, src.height) {
        return src.clone();
    }
    Mask::from_fn(nw, nh, |x, y| {
        let sx = (x as u64 * src.width as u64 / nw as u64) as u32;
        let sy = (y as u64 * src.height as u64 / nh as u64) as u32;
        src.get(sx.min(src.width - 1), sy.min(src.height - 1))
    })
}

/// Nearest-neighbor rescale of an RGB patch to (nw, nh).
pub fn scale_rgb(src: &Rgb, nw: u32, nh: u32) -> Rgb {
    if (nw, nh) == (src.width, src.height) {
        return src.clone();
    }
    let mut out = Rgb::new(nw, nh, [0, 0, 0]);
    for y in 0..nh {
        for x in 0..nw {
            let sx = (x as u64 * src.width as u64 / nw as u64) as u32;
            let sy = (y as u64 * src.height as u64 / nh as u64) as u32;
            out.set(x, y, src.get(sx.min(src.width - 1), sy.min(src.height - 1)));
        }
    }
    out
}
