//! 2D coordinates in bond-length units.
//!
//! Ring systems are built from regular polygons fused edge to edge, chains
//! grow in a 120° zig-zag, and crowded layouts are untangled by reflecting or
//! rotating whole substituents about acyclic bonds. If atoms still collide a
//! seeded force-directed pass takes over and the layout is flagged `refined`.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RenderError;
use crate::molecule::{BondOrder, Molecule};

pub type Point = [f64; 2];

/// Atoms closer than this after untangling trigger the force-directed pass.
const CROWDED: f64 = 0.45;
/// Bond length tolerance for layouts that skip refinement.
pub const BOND_TOLERANCE: f64 = 1e-6;
/// Pairs closer than this contribute to the overlap penalty.
const CONTACT: f64 = 0.75;
const REFINE_SEED: u64 = 0x2d_1a_7e;

#[derive(Debug, Clone, PartialEq)]
pub struct Layout2D {
    pub coords: Vec<Point>,
    /// The force-directed fallback ran; bond lengths are then only
    /// approximately 1.
    pub refined: bool,
}

impl Layout2D {
    /// Smallest distance between two distinct atoms.
    /// Largest `|length - 1|` over the molecule's bonds.
    pub fn max_bond_deviation(&self, m: &Molecule) -> f64 {
        m.bonds()
            .iter()
            .map(|b| (dist(self.coords[b.begin], self.coords[b.end]) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.coords.len() {
            for j in i + 1..self.coords.len() {
                best = best.min(dist(self.coords[i], self.coords[j]));
            }
        }
        best
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn angle(from: Point, to: Point) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0])
}

fn step(from: Point, theta: f64) -> Point {
    [from[0] + theta.cos(), from[1] + theta.sin()]
}

fn rotate_about(p: Point, c: Point, theta: f64) -> Point {
    let (s, co) = theta.sin_cos();
    let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
    [c[0] + dx * co - dy * s, c[1] + dx * s + dy * co]
}

fn reflect_across(p: Point, a: Point, b: Point) -> Point {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2;
    let foot = [a[0] + t * dx, a[1] + t * dy];
    [2.0 * foot[0] - p[0], 2.0 * foot[1] - p[1]]
}

fn centroid(points: impl IntoIterator<Item = Point>) -> Option<Point> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        sx += p[0];
        sy += p[1];
        n += 1;
    }
    (n > 0).then(|| [sx / n as f64, sy / n as f64])
}

fn normalize_angle(mut a: f64) -> f64 {
    while a < 0.0 {
        a += 2.0 * PI;
    }
    while a >= 2.0 * PI {
        a -= 2.0 * PI;
    }
    a
}

/// Lays out a connected molecule.
pub fn layout_2d(m: &Molecule) -> Result<Layout2D, RenderError> {
    if m.components().len() > 1 {
        return Err(RenderError::DisconnectedMolecule);
    }
    if m.is_empty() {
        return Ok(Layout2D {
            coords: Vec::new(),
            refined: false,
        });
    }
    let mut b = Builder::new(m);
    b.place_all();
    let mut coords: Vec<Point> = b.pos.iter().map(|p| p.expect("every atom placed")).collect();
    untangle(m, &mut coords);
    let mut layout = Layout2D {
        coords,
        refined: false,
    };
    // cages whose bridges cannot span their gap at unit length also go to
    // the spring model
    if layout.min_separation() < CROWDED || layout.max_bond_deviation(m) > BOND_TOLERANCE {
        refine(m, &mut layout.coords);
        layout.refined = true;
    }
    Ok(layout)
}

struct Builder<'a> {
    m: &'a Molecule,
    pos: Vec<Option<Point>>,
    /// ring-system id per atom
    system_of: Vec<Option<usize>>,
    systems: Vec<Vec<usize>>,
    /// sign of the last chain turn taken into each atom
    turn: Vec<f64>,
}

impl<'a> Builder<'a> {
    fn new(m: &'a Molecule) -> Self {
        // rings sharing an atom belong to the same system
        let rings = m.rings();
        let mut parent: Vec<usize> = (0..rings.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for i in 0..rings.len() {
            for j in i + 1..rings.len() {
                if rings[i].iter().any(|a| rings[j].contains(a)) {
                    let (x, y) = (find(&mut parent, i), find(&mut parent, j));
                    parent[x.max(y)] = x.min(y);
                }
            }
        }
        let mut system_ids: Vec<usize> = Vec::new();
        let mut systems: Vec<Vec<usize>> = Vec::new();
        let mut system_of = vec![None; m.atom_count()];
        for i in 0..rings.len() {
            let root = find(&mut parent, i);
            let sid = match system_ids.iter().position(|&r| r == root) {
                Some(s) => s,
                None => {
                    system_ids.push(root);
                    systems.push(Vec::new());
                    systems.len() - 1
                }
            };
            systems[sid].push(i);
            for &a in &rings[i] {
                system_of[a] = Some(sid);
            }
        }
        Builder {
            m,
            pos: vec![None; m.atom_count()],
            system_of,
            systems,
            turn: vec![0.0; m.atom_count()],
        }
    }

    fn place_all(&mut self) {
        let mut queue = VecDeque::new();
        match self.system_of[0] {
            Some(s) => {
                let template = self.system_template(s);
                for (a, p) in template {
                    self.pos[a] = Some(p);
                    queue.push_back(a);
                }
            }
            None => {
                self.pos[0] = Some([0.0, 0.0]);
                queue.push_back(0);
            }
        }
        while let Some(a) = queue.pop_front() {
            let here = self.pos[a].unwrap();
            let mut fresh: Vec<usize> = self
                .m
                .neighbors(a)
                .iter()
                .map(|&(n, _)| n)
                .filter(|&n| self.pos[n].is_none())
                .collect();
            if fresh.is_empty() {
                continue;
            }
            fresh.sort_unstable();
            let placed_dirs: Vec<f64> = self
                .m
                .neighbors(a)
                .iter()
                .filter_map(|&(n, _)| self.pos[n].map(|p| angle(here, p)))
                .collect();
            let headings = self.headings(a, &placed_dirs, &fresh);
            for (&n, &(theta, turn)) in fresh.iter().zip(&headings) {
                let target = step(here, theta);
                match self.system_of[n] {
                    Some(s) => {
                        for (atom, p) in self.attach_system(s, n, target, theta) {
                            self.pos[atom] = Some(p);
                            queue.push_back(atom);
                        }
                    }
                    None => {
                        self.pos[n] = Some(target);
                        self.turn[n] = turn;
                        queue.push_back(n);
                    }
                }
            }
        }
    }

    /// Headings (and the chain turn sign) for the unplaced neighbours of `a`.
    fn headings(&self, a: usize, placed: &[f64], fresh: &[usize]) -> Vec<(f64, f64)> {
        let k = fresh.len();
        let here = self.pos[a].unwrap();
        match placed.len() {
            0 => match k {
                1 => vec![(-PI / 6.0, -1.0)],
                2 => vec![(7.0 * PI / 6.0, 1.0), (-PI / 6.0, -1.0)],
                _ => (0..k)
                    .map(|j| (PI / 2.0 + 2.0 * PI * j as f64 / k as f64, 0.0))
                    .collect(),
            },
            1 => {
                let back = placed[0];
                let incoming = back + PI;
                if k == 1 {
                    let p = self
                        .m
                        .neighbors(a)
                        .iter()
                        .find(|&&(n, _)| self.pos[n].is_some())
                        .unwrap();
                    let b_in = self.m.bond(p.1).order;
                    let b_out = self.m.bond(self.m.bond_between(a, fresh[0]).unwrap()).order;
                    let linear = b_in == BondOrder::Triple
                        || b_out == BondOrder::Triple
                        || (b_in == BondOrder::Double && b_out == BondOrder::Double);
                    if linear {
                        return vec![(incoming, self.turn[a])];
                    }
                    let sign = if self.turn[a] > 0.0 { -1.0 } else { 1.0 };
                    let theta = incoming + sign * PI / 3.0;
                    // avoid swinging into an already placed atom when the
                    // other side is free
                    let crowd = |t: f64| self.crowding(step(here, t));
                    let alt = incoming - sign * PI / 3.0;
                    if crowd(theta) > crowd(alt) + 1e-9 {
                        return vec![(alt, -sign)];
                    }
                    return vec![(theta, sign)];
                }
                if k == 2 {
                    return vec![(back + 2.0 * PI / 3.0, 1.0), (back - 2.0 * PI / 3.0, -1.0)];
                }
                (1..=k)
                    .map(|j| (back + 2.0 * PI * j as f64 / (k + 1) as f64, 0.0))
                    .collect()
            }
            _ => {
                let mut dirs: Vec<f64> = placed.iter().map(|&t| normalize_angle(t)).collect();
                dirs.sort_by(|x, y| x.partial_cmp(y).unwrap());
                let mut best = (0.0, dirs[0]);
                for i in 0..dirs.len() {
                    let start = dirs[i];
                    let end = if i + 1 < dirs.len() { dirs[i + 1] } else { dirs[0] + 2.0 * PI };
                    if end - start > best.0 + 1e-9 {
                        best = (end - start, start);
                    }
                }
                let (gap, start) = best;
                (1..=k)
                    .map(|j| (start + gap * j as f64 / (k + 1) as f64, 0.0))
                    .collect()
            }
        }
    }

    fn crowding(&self, p: Point) -> f64 {
        self.pos
            .iter()
            .flatten()
            .map(|&q| (CONTACT * 1.5 - dist(p, q)).max(0.0))
            .sum()
    }

    /// Places system `s` so that atom `anchor` sits at `target` with its
    /// exterior pointing back along `theta`.
    fn attach_system(&self, s: usize, anchor: usize, target: Point, theta: f64) -> Vec<(usize, Point)> {
        let template = self.system_template(s);
        let lookup = |a: usize| template.iter().find(|(x, _)| *x == a).map(|(_, p)| *p);
        let t_anchor = lookup(anchor).unwrap();
        let ring_nbrs: Vec<Point> = self
            .m
            .neighbors(anchor)
            .iter()
            .filter_map(|&(n, _)| lookup(n))
            .collect();
        let inner = centroid(ring_nbrs)
            .or_else(|| centroid(template.iter().map(|(_, p)| *p)))
            .unwrap();
        let mut exterior = angle(inner, t_anchor);
        if dist(inner, t_anchor) < 1e-9 {
            exterior = 0.0;
        }
        // exterior must point back towards the atom we came from
        let rot = (theta + PI) - exterior;
        let mut best: Option<(f64, Vec<(usize, Point)>)> = None;
        for mirror in [false, true] {
            let placed: Vec<(usize, Point)> = template
                .iter()
                .map(|&(a, p)| {
                    let p = if mirror {
                        // mirror through the exterior axis before rotating
                        reflect_across(p, t_anchor, step(t_anchor, exterior))
                    } else {
                        p
                    };
                    let r = rotate_about(p, t_anchor, rot);
                    (a, [r[0] - t_anchor[0] + target[0], r[1] - t_anchor[1] + target[1]])
                })
                .collect();
            let score: f64 = placed.iter().map(|&(_, p)| self.crowding(p)).sum();
            if best.as_ref().is_none_or(|(b, _)| score < *b - 1e-9) {
                best = Some((score, placed));
            }
        }
        best.unwrap().1
    }

    /// Coordinates of one ring system in its own frame, ordered by atom index.
    fn system_template(&self, s: usize) -> Vec<(usize, Point)> {
        let rings = self.m.rings();
        let mut pending: Vec<usize> = self.systems[s].clone();
        let mut pos: Vec<Option<Point>> = vec![None; self.m.atom_count()];
        // seed with the ring fused to the most others, then the largest
        let fusion = |r: usize| {
            pending
                .iter()
                .filter(|&&o| o != r && rings[o].iter().any(|a| rings[r].contains(a)))
                .count()
        };
        let first = *pending
            .iter()
            .max_by(|&&x, &&y| {
                (fusion(x), rings[x].len())
                    .cmp(&(fusion(y), rings[y].len()))
                    .then(y.cmp(&x))
            })
            .unwrap();
        place_polygon_free(&rings[first], &mut pos);
        pending.retain(|&r| r != first);
        while !pending.is_empty() {
            let shared = |r: usize, pos: &[Option<Point>]| rings[r].iter().filter(|&&a| pos[a].is_some()).count();
            let next = *pending
                .iter()
                .max_by(|&&x, &&y| shared(x, &pos).cmp(&shared(y, &pos)).then(y.cmp(&x)))
                .unwrap();
            place_fused_ring(&rings[next], &mut pos);
            pending.retain(|&r| r != next);
        }
        let mut out: Vec<(usize, Point)> = pos
            .iter()
            .enumerate()
            .filter_map(|(a, p)| p.map(|p| (a, p)))
            .collect();
        out.sort_by_key(|&(a, _)| a);
        out
    }
}

fn polygon_radius(n: usize) -> f64 {
    1.0 / (2.0 * (PI / n as f64).sin())
}

fn place_polygon_free(ring: &[usize], pos: &mut [Option<Point>]) {
    let n = ring.len();
    let r = polygon_radius(n);
    for (j, &a) in ring.iter().enumerate() {
        let t = -PI / 2.0 + 2.0 * PI * j as f64 / n as f64;
        pos[a] = Some([r * t.cos(), r * t.sin()]);
    }
}

/// Positions of a regular `n`-gon that has `u` then `v` as consecutive
/// vertices, centred on the given side of `u→v` (`side` = ±1).
fn polygon_from_edge(u: Point, v: Point, n: usize, side: f64) -> Vec<Point> {
    let mid = [(u[0] + v[0]) / 2.0, (u[1] + v[1]) / 2.0];
    let apothem = 1.0 / (2.0 * (PI / n as f64).tan());
    let d = [(v[0] - u[0]), (v[1] - u[1])];
    let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
    let normal = [-d[1] / len * side, d[0] / len * side];
    let c = [mid[0] + normal[0] * apothem, mid[1] + normal[1] * apothem];
    // direction of travel u -> v around c
    let cross = (u[0] - c[0]) * (v[1] - c[1]) - (u[1] - c[1]) * (v[0] - c[0]);
    let sign = if cross >= 0.0 { 1.0 } else { -1.0 };
    (0..n)
        .map(|j| rotate_about(u, c, sign * 2.0 * PI * j as f64 / n as f64))
        .collect()
}

fn side_of(u: Point, v: Point, p: Point) -> f64 {
    let cross = (v[0] - u[0]) * (p[1] - u[1]) - (v[1] - u[1]) * (p[0] - u[0]);
    if cross >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn place_fused_ring(ring: &[usize], pos: &mut [Option<Point>]) {
    let n = ring.len();
    let placed: Vec<bool> = ring.iter().map(|&a| pos[a].is_some()).collect();
    let count = placed.iter().filter(|&&p| p).count();
    let all_placed: Vec<Point> = pos.iter().flatten().copied().collect();
    if count == n {
        return;
    }
    if count == 1 {
        // spiro junction: new ring centred along the shared atom's exterior
        let k = placed.iter().position(|&p| p).unwrap();
        let u = pos[ring[k]].unwrap();
        let inner = centroid(all_placed.iter().copied().filter(|p| dist(*p, u) > 1e-9)).unwrap_or([u[0] - 1.0, u[1]]);
        let dir = angle(inner, u);
        let r = polygon_radius(n);
        let c = [u[0] + r * dir.cos(), u[1] + r * dir.sin()];
        for j in 0..n {
            let a = ring[(k + j) % n];
            if pos[a].is_none() {
                pos[a] = Some(rotate_about(u, c, 2.0 * PI * j as f64 / n as f64));
            }
        }
        return;
    }
    // find a maximal contiguous run of placed atoms
    let start = (0..n).find(|&i| placed[i] && !placed[(i + n - 1) % n]);
    let contiguous = start.is_some_and(|s| {
        let mut len = 0;
        while len < n && placed[(s + len) % n] {
            len += 1;
        }
        len == count
    });
    if let (Some(s), true) = (start, contiguous) {
        let u = pos[ring[s]].unwrap();
        let v = pos[ring[(s + 1) % n]].unwrap();
        let side = if count >= 3 {
            side_of(u, v, pos[ring[(s + 2) % n]].unwrap())
        } else {
            let others = centroid(all_placed.iter().copied().filter(|p| dist(*p, u) > 1e-9 && dist(*p, v) > 1e-9));
            match others {
                Some(c) => -side_of(u, v, c),
                None => 1.0,
            }
        };
        let poly = polygon_from_edge(u, v, n, side);
        let proposal: Vec<(usize, Point)> = (0..n)
            .map(|j| (ring[(s + j) % n], poly[j]))
            .filter(|&(a, _)| pos[a].is_none())
            .collect();
        let clash = proposal
            .iter()
            .any(|&(_, p)| all_placed.iter().any(|&q| dist(p, q) < CROWDED));
        // a longer placed run must already sit on the polygon
        let fits = (2..count).all(|j| dist(pos[ring[(s + j) % n]].unwrap(), poly[j]) < 1e-6);
        if !clash && fits {
            for (a, p) in proposal {
                pos[a] = Some(p);
            }
            return;
        }
    }
    place_bridges(ring, pos);
}

/// Places each unplaced arc of a bridged ring on a bowed path between its
/// placed endpoints, bulging away from the atoms already placed.
fn place_bridges(ring: &[usize], pos: &mut [Option<Point>]) {
    let n = ring.len();
    let all_placed: Vec<Point> = pos.iter().flatten().copied().collect();
    let center = centroid(all_placed.iter().copied()).unwrap_or([0.0, 0.0]);
    let mut i = 0;
    while i < n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if pos[a].is_some() && pos[b].is_none() {
            let mut arc = Vec::new();
            let mut j = (i + 1) % n;
            while pos[ring[j]].is_none() {
                arc.push(ring[j]);
                j = (j + 1) % n;
            }
            let x = pos[a].unwrap();
            let y = pos[ring[j]].unwrap();
            let m = arc.len();
            let mid = [(x[0] + y[0]) / 2.0, (x[1] + y[1]) / 2.0];
            let mut away = [mid[0] - center[0], mid[1] - center[1]];
            let norm = (away[0].powi(2) + away[1].powi(2)).sqrt();
            if norm < 1e-9 {
                let d = [y[0] - x[0], y[1] - x[1]];
                away = [-d[1], d[0]];
            }
            for (t, p) in bridge_path(x, y, m, away).into_iter().enumerate() {
                pos[arc[t]] = Some(p);
            }
            i += m;
        }
        i += 1;
    }
    // a ring with no placed atoms at all cannot occur inside a system walk
    for &a in ring {
        if pos[a].is_none() {
            pos[a] = Some(center);
        }
    }
}

/// `m` points joining `x` to `y` by `m + 1` unit steps on a circular arc
/// bulging towards `away`. When the gap is longer than the path can reach the
/// points are spread evenly on the straight segment instead.
fn bridge_path(x: Point, y: Point, m: usize, away: Point) -> Vec<Point> {
    let d = dist(x, y);
    let steps = (m + 1) as f64;
    let norm = (away[0].powi(2) + away[1].powi(2)).sqrt().max(1e-12);
    let away = [away[0] / norm, away[1] / norm];
    if d >= steps - 1e-12 || d < 1e-9 {
        return (1..=m)
            .map(|t| {
                let f = t as f64 / steps;
                [x[0] + (y[0] - x[0]) * f, x[1] + (y[1] - x[1]) * f]
            })
            .collect();
    }
    // chord ratio sin(steps*phi/2) / sin(phi/2) falls from `steps` to 0 on
    // (0, 2pi/steps); solve for the step angle phi that gives chord d
    let ratio = |phi: f64| (steps * phi / 2.0).sin() / (phi / 2.0).sin();
    let (mut lo, mut hi) = (1e-12, 2.0 * PI / steps);
    for _ in 0..200 {
        let midphi = (lo + hi) / 2.0;
        if ratio(midphi) > d {
            lo = midphi;
        } else {
            hi = midphi;
        }
    }
    let phi = (lo + hi) / 2.0;
    let radius = 1.0 / (2.0 * (phi / 2.0).sin());
    let total = steps * phi;
    // centre sits on the perpendicular bisector, opposite the bulge when the
    // arc is less than a half turn
    let mid = [(x[0] + y[0]) / 2.0, (x[1] + y[1]) / 2.0];
    let u = [(y[0] - x[0]) / d, (y[1] - x[1]) / d];
    let mut nrm = [-u[1], u[0]];
    if nrm[0] * away[0] + nrm[1] * away[1] < 0.0 {
        nrm = [-nrm[0], -nrm[1]];
    }
    let h = radius * (total / 2.0).cos();
    let c = [mid[0] - nrm[0] * h, mid[1] - nrm[1] * h];
    // the sweep direction is the one that lands on y
    let sign = if dist(rotate_about(x, c, total), y) < dist(rotate_about(x, c, -total), y) {
        1.0
    } else {
        -1.0
    };
    (1..=m).map(|t| rotate_about(x, c, sign * phi * t as f64)).collect()
}

fn overlap_penalty(coords: &[Point], m: &Molecule) -> f64 {
    let mut total = 0.0;
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            if m.bond_between(i, j).is_some() {
                continue;
            }
            let d = dist(coords[i], coords[j]);
            if d < CONTACT {
                total += (CONTACT - d).powi(2);
            }
        }
    }
    total
}

/// Atoms on the `side` end of acyclic bond `b`.
fn side_atoms(m: &Molecule, b: usize, side: usize) -> Vec<usize> {
    let bond = m.bond(b);
    let (root, other) = if side == bond.begin { (bond.begin, bond.end) } else { (bond.end, bond.begin) };
    let mut seen = vec![false; m.atom_count()];
    seen[other] = true;
    seen[root] = true;
    let mut out = vec![root];
    let mut i = 0;
    while i < out.len() {
        for &(n, _) in m.neighbors(out[i]) {
            if !seen[n] {
                seen[n] = true;
                out.push(n);
            }
        }
        i += 1;
    }
    out
}

/// Reflects or rotates substituents about acyclic bonds while that lowers
/// the overlap penalty. Every move is an isometry of the moved part, so bond
/// lengths are untouched.
fn untangle(m: &Molecule, coords: &mut [Point]) {
    let mut penalty = overlap_penalty(coords, m);
    if penalty == 0.0 {
        return;
    }
    let rotations = [PI / 6.0, -PI / 6.0, PI / 3.0, -PI / 3.0, PI / 2.0, -PI / 2.0, PI];
    for _pass in 0..12 {
        let mut improved = false;
        for b in 0..m.bond_count() {
            let bond = m.bond(b);
            if bond.in_ring {
                continue;
            }
            let left = side_atoms(m, b, bond.begin);
            let right = side_atoms(m, b, bond.end);
            let (moving, pivot) = if left.len() <= right.len() {
                (left, bond.end)
            } else {
                (right, bond.begin)
            };
            let anchor = if pivot == bond.begin { bond.end } else { bond.begin };
            let (p0, p1) = (coords[pivot], coords[anchor]);
            let mut candidates: Vec<Vec<Point>> = Vec::new();
            candidates.push(moving.iter().map(|&a| reflect_across(coords[a], p0, p1)).collect());
            for &r in &rotations {
                candidates.push(moving.iter().map(|&a| rotate_about(coords[a], p0, r)).collect());
            }
            let mut best: Option<(f64, Vec<Point>)> = None;
            for cand in candidates {
                let saved: Vec<Point> = moving.iter().map(|&a| coords[a]).collect();
                for (&a, &p) in moving.iter().zip(&cand) {
                    coords[a] = p;
                }
                let pen = overlap_penalty(coords, m);
                for (&a, &p) in moving.iter().zip(&saved) {
                    coords[a] = p;
                }
                if pen < penalty - 1e-9 && best.as_ref().is_none_or(|(bp, _)| pen < *bp - 1e-12) {
                    best = Some((pen, cand));
                }
            }
            if let Some((pen, cand)) = best {
                for (&a, &p) in moving.iter().zip(&cand) {
                    coords[a] = p;
                }
                penalty = pen;
                improved = true;
                if penalty == 0.0 {
                    return;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Spring relaxation with unit bond springs and short-range repulsion,
/// starting from the current coordinates plus a small seeded jitter.
fn refine(m: &Molecule, coords: &mut [Point]) {
    let n = coords.len();
    let mut rng = ChaCha8Rng::seed_from_u64(REFINE_SEED);
    for p in coords.iter_mut() {
        p[0] += rng.random_range(-0.05..0.05);
        p[1] += rng.random_range(-0.05..0.05);
    }
    let iterations = 600;
    for it in 0..iterations {
        let rate = 0.1 * (1.0 - it as f64 / iterations as f64) + 0.01;
        let mut force = vec![[0.0f64; 2]; n];
        for b in m.bonds() {
            let (i, j) = (b.begin, b.end);
            let d = dist(coords[i], coords[j]).max(1e-6);
            let f = (d - 1.0) / d;
            let dx = (coords[j][0] - coords[i][0]) * f;
            let dy = (coords[j][1] - coords[i][1]) * f;
            force[i][0] += dx;
            force[i][1] += dy;
            force[j][0] -= dx;
            force[j][1] -= dy;
        }
        for i in 0..n {
            for j in i + 1..n {
                if m.bond_between(i, j).is_some() {
                    continue;
                }
                let d = dist(coords[i], coords[j]).max(1e-6);
                if d < 1.6 {
                    let f = 0.5 * (1.6 - d) / d;
                    let dx = (coords[j][0] - coords[i][0]) * f;
                    let dy = (coords[j][1] - coords[i][1]) * f;
                    force[i][0] -= dx;
                    force[i][1] -= dy;
                    force[j][0] += dx;
                    force[j][1] += dy;
                }
            }
        }
        for (p, f) in coords.iter_mut().zip(&force) {
            p[0] += rate * f[0];
            p[1] += rate * f[1];
        }
    }
}
