//! Medial-axis patch extraction.
//!
//! The mask is thinned to a skeleton, the longest skeleton path is simplified
//! into straight segments, and each segment yields one patch: an oriented
//! rectangle around the segment, sampled once with bilinear interpolation so
//! that cropping, rotation and resizing happen in a single resample.

use std::collections::VecDeque;

use super::image::{LabeledImage, Mask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchConfig {
    /// Output height and width.
    pub target: (usize, usize),
    /// Douglas-Peucker tolerance in source pixels; `None` scales 2 px with
    /// the target height relative to 32.
    pub tolerance: Option<f32>,
    /// Crop height as a multiple of the local tissue thickness.
    pub margin: f32,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            target: (32, 64),
            tolerance: None,
            margin: 1.2,
        }
    }
}

impl PatchConfig {
    fn tolerance(&self) -> f32 {
        self.tolerance
            .unwrap_or_else(|| 2.0 * (self.target.0 as f32 / 32.0).max(1.0))
    }
}

type Pt = (f32, f32);

const NEIGHBORS: [(isize, isize); 8] = [
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
];

fn at(m: &Mask, y: isize, x: isize) -> bool {
    y >= 0 && x >= 0 && (y as usize) < m.height && (x as usize) < m.width && m.get(y as usize, x as usize)
}

fn count_components(m: &Mask) -> usize {
    let mut seen = vec![false; m.data.len()];
    let mut count = 0;
    for start in 0..m.data.len() {
        if !m.data[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (y, x) = ((i / m.width) as isize, (i % m.width) as isize);
            for (dy, dx) in NEIGHBORS {
                if at(m, y + dy, x + dx) {
                    let j = (y + dy) as usize * m.width + (x + dx) as usize;
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    count
}

fn survives_erosion(m: &Mask) -> bool {
    (0..m.height as isize).any(|y| {
        (0..m.width as isize)
            .any(|x| at(m, y, x) && NEIGHBORS.iter().all(|&(dy, dx)| at(m, y + dy, x + dx)))
    })
}

pub fn validate_mask(m: &Mask) -> Result<()> {
    if m.count() == 0 {
        return Err(Error::Mask("mask is empty".into()));
    }
    let n = count_components(m);
    if n != 1 {
        return Err(Error::Mask(format!("expected one connected component, found {n}")));
    }
    if !survives_erosion(m) {
        return Err(Error::Mask("tissue is thinner than 3 px everywhere".into()));
    }
    Ok(())
}

/// Zhang-Suen thinning.
pub fn thin(m: &Mask) -> Mask {
    let mut cur = m.clone();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for y in 0..cur.height as isize {
                for x in 0..cur.width as isize {
                    if !at(&cur, y, x) {
                        continue;
                    }
                    // P2..P9 clockwise from north
                    let p: Vec<bool> = NEIGHBORS.iter().map(|&(dy, dx)| at(&cur, y + dy, x + dx)).collect();
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (n, e, s, w) = (p[0], p[2], p[4], p[6]);
                    let ok = if pass == 0 {
                        !(n && e && s) && !(e && s && w)
                    } else {
                        !(n && e && w) && !(n && s && w)
                    };
                    if ok {
                        remove.push((y as usize, x as usize));
                    }
                }
            }
            changed |= !remove.is_empty();
            for (y, x) in remove {
                cur.set(y, x, false);
            }
        }
        if !changed {
            return cur;
        }
    }
}

fn bfs_farthest(m: &Mask, start: usize) -> (usize, Vec<usize>) {
    let mut parent = vec![usize::MAX; m.data.len()];
    parent[start] = start;
    let mut queue = VecDeque::from([start]);
    let mut last = start;
    while let Some(i) = queue.pop_front() {
        last = i;
        let (y, x) = ((i / m.width) as isize, (i % m.width) as isize);
        for (dy, dx) in NEIGHBORS {
            if at(m, y + dy, x + dx) {
                let j = (y + dy) as usize * m.width + (x + dx) as usize;
                if parent[j] == usize::MAX {
                    parent[j] = i;
                    queue.push_back(j);
                }
            }
        }
    }
    (last, parent)
}

/// Longest skeleton path by double breadth-first search, as pixel centers.
pub fn longest_path(skeleton: &Mask) -> Vec<Pt> {
    let Some(start) = skeleton.data.iter().position(|&v| v) else {
        return Vec::new();
    };
    let (a, _) = bfs_farthest(skeleton, start);
    let (b, parent) = bfs_farthest(skeleton, a);
    let mut path = vec![b];
    let mut i = b;
    while i != a {
        i = parent[i];
        path.push(i);
    }
    path.iter()
        .map(|&i| ((i % skeleton.width) as f32 + 0.5, (i / skeleton.width) as f32 + 0.5))
        .collect()
}

fn dist_to_line(p: Pt, a: Pt, b: Pt) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return (p.0 - a.0).hypot(p.1 - a.1);
    }
    ((p.0 - a.0) * dy - (p.1 - a.1) * dx).abs() / len
}

/// Douglas-Peucker simplification; returns indices of kept points.
pub fn simplify(points: &[Pt], tolerance: f32) -> Vec<usize> {
    fn rec(points: &[Pt], lo: usize, hi: usize, tol: f32, keep: &mut Vec<usize>) {
        let (mut best, mut best_d) = (lo, 0.0);
        for i in lo + 1..hi {
            let d = dist_to_line(points[i], points[lo], points[hi]);
            if d > best_d {
                (best, best_d) = (i, d);
            }
        }
        if best_d > tol {
            rec(points, lo, best, tol, keep);
            keep.push(best);
            rec(points, best, hi, tol, keep);
        }
    }
    if points.len() < 2 {
        return (0..points.len()).collect();
    }
    let mut keep = vec![0];
    rec(points, 0, points.len() - 1, tolerance, &mut keep);
    keep.push(points.len() - 1);
    keep
}

fn inside(m: &Mask, p: Pt) -> bool {
    p.0 >= 0.0 && p.1 >= 0.0 && at(m, p.1.floor() as isize, p.0.floor() as isize)
}

const MARCH_STEP: f32 = 0.125;

/// Distance from `p` along `dir` to the first point outside the mask.
fn march(m: &Mask, p: Pt, dir: Pt) -> f32 {
    let limit = (m.height + m.width) as f32;
    let mut t = 0.0;
    while t < limit && inside(m, (p.0 + t * dir.0, p.1 + t * dir.1)) {
        t += MARCH_STEP;
    }
    t
}

/// A straight piece of medial axis: the centered line through the tissue and
/// the tissue thickness across it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Pt,
    pub end: Pt,
    pub thickness: f32,
}

impl Segment {
    pub fn length(&self) -> f32 {
        (self.end.0 - self.start.0).hypot(self.end.1 - self.start.1)
    }

    fn dir(&self) -> Pt {
        let l = self.length().max(f32::EPSILON);
        ((self.end.0 - self.start.0) / l, (self.end.1 - self.start.1) / l)
    }
}

/// Recenters a segment between the tissue borders and measures its thickness.
fn measure(m: &Mask, a: Pt, b: Pt) -> Segment {
    let mut seg = Segment { start: a, end: b, thickness: 0.0 };
    let u = seg.dir();
    let n = (-u.1, u.0);
    let (mut shift, mut thick, mut k) = (0.0, 0.0, 0);
    for f in [0.25f32, 0.5, 0.75] {
        let c = (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1));
        if !inside(m, c) {
            continue;
        }
        let plus = march(m, c, n);
        let minus = march(m, c, (-n.0, -n.1));
        shift += (plus - minus) / 2.0;
        thick += plus + minus;
        k += 1;
    }
    if k > 0 {
        let (shift, thick) = (shift / k as f32, thick / k as f32);
        seg.start = (a.0 + shift * n.0, a.1 + shift * n.1);
        seg.end = (b.0 + shift * n.0, b.1 + shift * n.1);
        seg.thickness = thick;
    }
    seg
}

/// Straight medial-axis segments of a validated mask, in path order.
pub fn medial_segments(mask: &Mask, tolerance: f32) -> Result<Vec<Segment>> {
    validate_mask(mask)?;
    let path = longest_path(&thin(mask));
    if path.len() < 2 {
        return Err(Error::Mask("skeleton degenerates to a single point".into()));
    }
    let mut verts: Vec<Pt> = simplify(&path, tolerance).into_iter().map(|i| path[i]).collect();

    let thickness_near = |verts: &[Pt], i: usize| measure(mask, verts[i], verts[i + 1]).thickness;
    // drop terminal spurs (e.g. thinning forks into corners) and collapse
    // short interior kinks, both judged against the neighbouring thickness
    loop {
        let nseg = verts.len() - 1;
        if nseg < 2 {
            break;
        }
        let len = |i: usize| (verts[i + 1].0 - verts[i].0).hypot(verts[i + 1].1 - verts[i].1);
        if len(0) < thickness_near(&verts, 1) {
            verts.remove(0);
            continue;
        }
        if len(nseg - 1) < thickness_near(&verts, nseg - 2) {
            verts.pop();
            continue;
        }
        let short = (1..nseg - 1).find(|&i| {
            len(i) < thickness_near(&verts, i - 1).min(thickness_near(&verts, i + 1))
        });
        match short {
            Some(i) => {
                let mid = ((verts[i].0 + verts[i + 1].0) / 2.0, (verts[i].1 + verts[i + 1].1) / 2.0);
                verts[i] = mid;
                verts.remove(i + 1);
            }
            None => break,
        }
    }

    let nseg = verts.len() - 1;
    let mut segs: Vec<Segment> = (0..nseg).map(|i| measure(mask, verts[i], verts[i + 1])).collect();
    // terminal ends reach out to the tissue border
    if let Some(first) = segs.first_mut() {
        let u = first.dir();
        let t = march(mask, first.start, (-u.0, -u.1));
        first.start = (first.start.0 - t * u.0, first.start.1 - t * u.1);
    }
    if let Some(last) = segs.last_mut() {
        let u = last.dir();
        let t = march(mask, last.end, u);
        last.end = (last.end.0 + t * u.0, last.end.1 + t * u.1);
    }
    if segs.iter().any(|s| s.thickness <= 0.0 || s.length() <= 0.0) {
        return Err(Error::Mask("degenerate medial-axis segment".into()));
    }
    Ok(segs)
}

fn sample_bilinear(img: &LabeledImage, p: Pt, out: &mut [f32]) {
    let fx = (p.0 - 0.5).clamp(0.0, (img.width - 1) as f32);
    let fy = (p.1 - 0.5).clamp(0.0, (img.height - 1) as f32);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
    let (ax, ay) = (fx - x0 as f32, fy - y0 as f32);
    for (c, o) in out.iter_mut().enumerate() {
        let top = img.get(y0, x0, c) * (1.0 - ax) + img.get(y0, x1, c) * ax;
        let bot = img.get(y1, x0, c) * (1.0 - ax) + img.get(y1, x1, c) * ax;
        *o = (top * (1.0 - ay) + bot * ay).clamp(0.0, 1.0);
    }
}

/// Resamples the oriented rectangle around `seg` to `target`, the segment
/// direction becoming the patch's horizontal axis.
pub fn resample_segment(img: &LabeledImage, seg: &Segment, target: (usize, usize), margin: f32) -> Vec<f32> {
    let (th, tw) = target;
    let u = seg.dir();
    let n = (-u.1, u.0);
    let (len, height) = (seg.length(), seg.thickness * margin);
    let mut px = vec![0.0; th * tw * 3];
    for r in 0..th {
        let t = ((r as f32 + 0.5) / th as f32 - 0.5) * height;
        for c in 0..tw {
            let s = (c as f32 + 0.5) / tw as f32 * len;
            let p = (
                seg.start.0 + s * u.0 + t * n.0,
                seg.start.1 + s * u.1 + t * n.1,
            );
            sample_bilinear(img, p, &mut px[(r * tw + c) * 3..(r * tw + c) * 3 + 3]);
        }
    }
    px
}

fn luminance_halves(px: &[f32], h: usize, w: usize) -> (f32, f32) {
    let (mut top, mut bot) = (0.0, 0.0);
    for y in 0..h {
        let row: f32 = px[y * w * 3..(y + 1) * w * 3].iter().sum();
        if 2 * y + 1 < h {
            top += row;
        } else if 2 * y + 1 > h {
            bot += row;
        }
    }
    (top, bot)
}

/// Patches along the medial axis of `mask`, one per straight segment.
/// Each patch is turned so its darker half lies at the bottom.
pub fn extract_patches(img: &LabeledImage, mask: &Mask, cfg: &PatchConfig) -> Result<Vec<LabeledImage>> {
    if (mask.height, mask.width) != (img.height, img.width) {
        return Err(Error::Mask(format!(
            "mask is {}x{} but image is {}x{}",
            mask.height, mask.width, img.height, img.width
        )));
    }
    let (th, tw) = cfg.target;
    if th == 0 || tw == 0 || !(cfg.margin > 0.0) {
        return Err(Error::InvalidConfig("patch target and margin must be positive".into()));
    }
    let segs = medial_segments(mask, cfg.tolerance())?;
    segs.iter()
        .map(|seg| {
            let mut px = resample_segment(img, seg, cfg.target, cfg.margin);
            let (top, bot) = luminance_halves(&px, th, tw);
            if top < bot {
                // 180° turn: reverse pixel order, keep channel order
                let pixels: Vec<[f32; 3]> = px.chunks_exact(3).rev().map(|c| [c[0], c[1], c[2]]).collect();
                px = pixels.concat();
            }
            LabeledImage::new(th, tw, px, img.label, img.patient, img.provenance())
        })
        .collect()
}
