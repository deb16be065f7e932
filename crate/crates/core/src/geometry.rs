//! Circle level set and cut-cell quadrature.
//!
//! The interface is the circle `|x - c| = r`. The inner subdomain (`phi <= 0`) is
//! [`Domain::Inner`], the outer one is [`Domain::Outer`] and the circle itself is
//! [`Domain::Interface`].
//!
//! Bulk quadrature on a cut triangle lives on polygons in which every arc of the
//! circle inside the triangle is replaced by `n_sub` chords. Interface quadrature
//! is placed on the true circle. Reported measures are exact: the circular
//! segments between chords and arcs are added back analytically.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Point2, Vector2};
use thiserror::Error;

use crate::mesh::{signed_area, BackgroundMesh, BoxDomain};
use crate::quadrature::{gauss_legendre, points_for_degree, segment_rule, triangle_rule, QuadratureRule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("circle is not strictly inside the box (clearance {0})")]
    CircleLeavesBox(f64),
    #[error("the whole circle lies inside element {0}; refine the mesh")]
    CircleInsideElement(usize),
    #[error("interface passes through mesh vertex {0}; shift the circle slightly")]
    InterfaceThroughVertex(usize),
    #[error("inconsistent cut topology in element {0}")]
    Topology(usize),
    #[error("n_sub must be at least 1")]
    InvalidSubdivision,
}

/// Subdomain index: the interface and the two bulk regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Interface = 0,
    Outer = 1,
    Inner = 2,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Interface, Domain::Outer, Domain::Inner];
    pub const BULK: [Domain; 2] = [Domain::Outer, Domain::Inner];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Domain> {
        Domain::ALL.get(i).copied()
    }

    /// Topological dimension: 1 for the curve, 2 for the bulk regions.
    pub fn dimension(self) -> usize {
        match self {
            Domain::Interface => 1,
            _ => 2,
        }
    }

    pub fn is_bulk(self) -> bool {
        self != Domain::Interface
    }

    fn bulk_slot(self) -> usize {
        match self {
            Domain::Outer => 0,
            Domain::Inner => 1,
            Domain::Interface => panic!("the interface has no bulk rule"),
        }
    }

    fn of_sign(phi: f64) -> Domain {
        if phi <= 0.0 {
            Domain::Inner
        } else {
            Domain::Outer
        }
    }
}

/// Where a triangle sits relative to the circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Outer,
    Inner,
    Cut,
}

impl Location {
    /// Whether the element intersects `domain`.
    pub fn touches(self, domain: Domain) -> bool {
        matches!(
            (self, domain),
            (Location::Cut, _) | (Location::Outer, Domain::Outer) | (Location::Inner, Domain::Inner)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSet {
    pub center: Point2<f64>,
    pub radius: f64,
}

impl LevelSet {
    pub fn new(center: Point2<f64>, radius: f64) -> Result<Self, GeometryError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(GeometryError::InvalidRadius(radius));
        }
        Ok(Self { center, radius })
    }

    pub fn unit_circle() -> Self {
        Self { center: Point2::origin(), radius: 1.0 }
    }

    pub fn signed_distance(&self, p: &Point2<f64>) -> f64 {
        (p - self.center).norm() - self.radius
    }

    /// Unit normal pointing out of the inner region, extended radially off the circle.
    pub fn normal(&self, p: &Point2<f64>) -> Vector2<f64> {
        (p - self.center).normalize()
    }

    /// Closest point on the circle.
    pub fn project(&self, p: &Point2<f64>) -> Point2<f64> {
        self.center + self.normal(p) * self.radius
    }

    pub fn point_at(&self, theta: f64) -> Point2<f64> {
        self.center + Vector2::new(theta.cos(), theta.sin()) * self.radius
    }

    pub fn angle_of(&self, p: &Point2<f64>) -> f64 {
        let d = p - self.center;
        d.y.atan2(d.x)
    }

    /// Distance from the circle to the nearest side of `b`; negative if the circle leaves it.
    pub fn clearance(&self, b: &BoxDomain) -> f64 {
        b.distance_to_boundary(&self.center) - self.radius
    }

    /// Parameters `t` in `[0, 1]` where `a + t (b - a)` meets the circle.
    ///
    /// Roots are sorted and merged within 1e-12. A tangent segment yields its single
    /// touching parameter.
    pub fn edge_circle_intersections(&self, a: &Point2<f64>, b: &Point2<f64>) -> Vec<f64> {
        let d = b - a;
        let f = a - self.center;
        let qa = d.norm_squared();
        if qa == 0.0 {
            return Vec::new();
        }
        let qb = 2.0 * d.dot(&f);
        let qc = f.norm_squared() - self.radius * self.radius;
        let disc = qb * qb - 4.0 * qa * qc;
        let scale = qb * qb + (4.0 * qa * qc).abs();
        let mut roots = Vec::with_capacity(2);
        if disc.abs() <= 1e-14 * scale {
            roots.push(-qb / (2.0 * qa));
        } else if disc > 0.0 {
            let s = disc.sqrt();
            // Cancellation-free pair of roots.
            let q = -0.5 * (qb + qb.signum() * s);
            let (t1, t2) = if q != 0.0 { (q / qa, qc / q) } else { (-s / (2.0 * qa), s / (2.0 * qa)) };
            roots.push(t1.min(t2));
            roots.push(t1.max(t2));
        }
        const TOL: f64 = 1e-12;
        let mut out: Vec<f64> = Vec::with_capacity(2);
        for t in roots {
            if (-TOL..=1.0 + TOL).contains(&t) {
                let t = t.clamp(0.0, 1.0);
                if out.last().is_none_or(|&last| (t - last).abs() > TOL) {
                    out.push(t);
                }
            }
        }
        out
    }

    /// Exact classification of a closed triangle against the circle.
    pub fn classify_element(&self, tri: &[Point2<f64>; 3]) -> Location {
        let boundary = BoundaryWalk::new(self, tri);
        if boundary.transitions().next().is_some() {
            return Location::Cut;
        }
        match boundary.labels[0] {
            Domain::Inner => Location::Inner,
            _ if point_in_triangle(tri, &self.center, 0.0) && self.circle_inside(tri) => Location::Cut,
            _ => Location::Outer,
        }
    }

    /// True if the whole circle lies inside the triangle.
    fn circle_inside(&self, tri: &[Point2<f64>; 3]) -> bool {
        (0..3).all(|k| {
            let a = tri[k];
            let b = tri[(k + 1) % 3];
            let d = b - a;
            let n = Vector2::new(d.y, -d.x) / d.norm();
            (a - self.center).dot(&n) > self.radius
        })
    }
}

/// A quadrature point on the circle with the exterior normal of the inner region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfacePoint {
    pub point: Point2<f64>,
    pub weight: f64,
    pub normal: Vector2<f64>,
}

/// Part of the circle inside one triangle, swept counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub start: f64,
    pub sweep: f64,
}

/// One polygonal piece of a cut triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct CutPolygon {
    pub domain: Domain,
    /// Counter-clockwise vertices.
    pub vertices: Vec<Point2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementCut {
    pub element: usize,
    pub location: Location,
    bulk: [QuadratureRule; 2],
    pub interface: Vec<InterfacePoint>,
    pub arcs: Vec<Arc>,
    /// Chord segments, oriented with the inner region on the left.
    pub chords: Vec<[Point2<f64>; 2]>,
    pub polygons: Vec<CutPolygon>,
    measures: [f64; 3],
    chord_measures: [f64; 3],
}

impl ElementCut {
    pub fn bulk_rule(&self, domain: Domain) -> &QuadratureRule {
        &self.bulk[domain.bulk_slot()]
    }

    /// Exact `|T ∩ Ω_i|`; for the interface this is the arc length.
    pub fn measure(&self, domain: Domain) -> f64 {
        self.measures[domain.index()]
    }

    /// Measures of the chord-polygon approximation; chord length for the interface.
    pub fn chord_measure(&self, domain: Domain) -> f64 {
        self.chord_measures[domain.index()]
    }

    pub fn is_cut(&self) -> bool {
        self.location == Location::Cut
    }
}

/// Transversal crossing of a face by the circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub point: Point2<f64>,
    /// Unit tangent of the circle, oriented along the face normal.
    pub conormal: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceCut {
    pub face: usize,
    /// Sub-segments with their subdomain.
    pub pieces: Vec<(Domain, [Point2<f64>; 2])>,
    rules: [QuadratureRule; 2],
    pub crossings: Vec<Crossing>,
    measures: [f64; 2],
}

impl FaceCut {
    pub fn rule(&self, domain: Domain) -> &QuadratureRule {
        &self.rules[domain.bulk_slot()]
    }

    /// `|F ∩ Ω_i|` for the bulk domains; the number of crossings for the interface.
    pub fn measure(&self, domain: Domain) -> f64 {
        match domain {
            Domain::Interface => self.crossings.len() as f64,
            d => self.measures[d.bulk_slot()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutOptions {
    pub n_sub: usize,
    pub q_order: usize,
}

impl Default for CutOptions {
    fn default() -> Self {
        Self { n_sub: 4, q_order: 4 }
    }
}

/// Triangle boundary split at vertices and transversal circle crossings.
struct BoundaryWalk {
    nodes: Vec<Point2<f64>>,
    /// Label of the segment from `nodes[k]` to `nodes[k + 1]`.
    labels: Vec<Domain>,
}

impl BoundaryWalk {
    fn new(ls: &LevelSet, tri: &[Point2<f64>; 3]) -> Self {
        const TOL: f64 = 1e-12;
        let mut nodes = Vec::with_capacity(9);
        for k in 0..3 {
            let a = tri[k];
            let b = tri[(k + 1) % 3];
            nodes.push(a);
            for t in ls.edge_circle_intersections(&a, &b) {
                if t > TOL && t < 1.0 - TOL {
                    // Snap onto the circle so interface points share the same location.
                    nodes.push(ls.project(&(a + (b - a) * t)));
                }
            }
        }
        let m = nodes.len();
        let labels = (0..m)
            .map(|k| {
                let mid = nodes[k] + (nodes[(k + 1) % m] - nodes[k]) * 0.5;
                Domain::of_sign(ls.signed_distance(&mid))
            })
            .collect();
        Self { nodes, labels }
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes where the segment label changes.
    fn transitions(&self) -> impl Iterator<Item = usize> + '_ {
        let m = self.len();
        (0..m).filter(move |&k| self.labels[(k + m - 1) % m] != self.labels[k])
    }
}

fn point_in_triangle(tri: &[Point2<f64>; 3], p: &Point2<f64>, tol: f64) -> bool {
    let area = signed_area(tri);
    (0..3).all(|k| {
        let a = tri[k];
        let b = tri[(k + 1) % 3];
        (b - a).perp(&(p - a)) / (2.0 * area) >= -tol
    })
}

/// Minimum barycentric coordinate; positive inside.
fn insideness(tri: &[Point2<f64>; 3], p: &Point2<f64>) -> f64 {
    let area = signed_area(tri);
    (0..3)
        .map(|k| {
            let a = tri[k];
            let b = tri[(k + 1) % 3];
            0.5 * (b - a).perp(&(p - a)) / area
        })
        .fold(f64::INFINITY, f64::min)
}

fn polygon_area(p: &[Point2<f64>]) -> f64 {
    let n = p.len();
    0.5 * (0..n).map(|k| p[k].coords.perp(&p[(k + 1) % n].coords)).sum::<f64>()
}

/// Drops repeated points and straight-angle vertices.
fn simplify(mut poly: Vec<Point2<f64>>, scale: f64) -> Vec<Point2<f64>> {
    let tol = 1e-13 * scale;
    let mut changed = true;
    while changed && poly.len() >= 3 {
        changed = false;
        let n = poly.len();
        for k in 0..n {
            let prev = poly[(k + n - 1) % n];
            let cur = poly[k];
            let next = poly[(k + 1) % n];
            let e1 = cur - prev;
            let e2 = next - cur;
            let degenerate = e1.norm() <= tol
                || (e1.perp(&e2).abs() <= 1e-13 * e1.norm() * e2.norm() && e1.dot(&e2) > 0.0);
            if degenerate {
                poly.remove(k);
                changed = true;
                break;
            }
        }
    }
    poly
}

/// Ear clipping of a simple counter-clockwise polygon.
fn triangulate(poly: &[Point2<f64>]) -> Option<Vec<[Point2<f64>; 3]>> {
    let mut idx: Vec<usize> = (0..poly.len()).collect();
    let mut out = Vec::with_capacity(poly.len().saturating_sub(2));
    while idx.len() > 3 {
        let n = idx.len();
        let mut clipped = false;
        for k in 0..n {
            let (ia, ib, ic) = (idx[(k + n - 1) % n], idx[k], idx[(k + 1) % n]);
            let tri = [poly[ia], poly[ib], poly[ic]];
            if signed_area(&tri) <= 0.0 {
                continue;
            }
            let blocked = idx.iter().any(|&j| {
                j != ia && j != ib && j != ic && insideness(&tri, &poly[j]) > -1e-14 && poly[j] != poly[ia] && poly[j] != poly[ic]
            });
            if !blocked {
                out.push(tri);
                idx.remove(k);
                clipped = true;
                break;
            }
        }
        if !clipped {
            return None;
        }
    }
    if idx.len() == 3 {
        let tri = [poly[idx[0]], poly[idx[1]], poly[idx[2]]];
        if signed_area(&tri) > 0.0 {
            out.push(tri);
        }
    }
    Some(out)
}

fn sweep_ccw(from: f64, to: f64) -> f64 {
    let mut d = to - from;
    while d <= 0.0 {
        d += 2.0 * PI;
    }
    while d > 2.0 * PI {
        d -= 2.0 * PI;
    }
    d
}

fn interior_rule(tri: &[Point2<f64>; 3], q_order: usize) -> QuadratureRule {
    triangle_rule(tri, q_order)
}

/// Builds the cut data of a single triangle.
pub fn build_element_cut(
    ls: &LevelSet,
    element: usize,
    tri: &[Point2<f64>; 3],
    opts: CutOptions,
) -> Result<ElementCut, GeometryError> {
    if opts.n_sub == 0 {
        return Err(GeometryError::InvalidSubdivision);
    }
    let area = signed_area(tri);
    let walk = BoundaryWalk::new(ls, tri);
    let transitions: Vec<usize> = walk.transitions().collect();

    let uncut = |location: Location| {
        let mut bulk = [QuadratureRule::default(), QuadratureRule::default()];
        let mut measures = [0.0; 3];
        let domain = if location == Location::Inner { Domain::Inner } else { Domain::Outer };
        bulk[domain.bulk_slot()] = interior_rule(tri, opts.q_order);
        measures[domain.index()] = area;
        ElementCut {
            element,
            location,
            bulk,
            interface: Vec::new(),
            arcs: Vec::new(),
            chords: Vec::new(),
            polygons: vec![CutPolygon { domain, vertices: tri.to_vec() }],
            measures,
            chord_measures: measures,
        }
    };

    if transitions.is_empty() {
        if walk.labels[0] == Domain::Outer && ls.circle_inside(tri) {
            return Err(GeometryError::CircleInsideElement(element));
        }
        let loc = if walk.labels[0] == Domain::Inner { Location::Inner } else { Location::Outer };
        return Ok(uncut(loc));
    }
    if transitions.len() % 2 != 0 {
        return Err(GeometryError::Topology(element));
    }

    // Pair the transitions into arcs that run inside the triangle. Sorted by angle,
    // inside and outside arcs alternate, so only the parity has to be chosen.
    let angle: Vec<f64> = walk.nodes.iter().map(|p| ls.angle_of(p)).collect();
    let mut sorted = transitions.clone();
    sorted.sort_by(|&a, &b| angle[a].total_cmp(&angle[b]));
    let k = sorted.len();
    let arcs_for = |parity: usize| -> Vec<(usize, usize, f64)> {
        (0..k / 2)
            .map(|m| {
                let a = sorted[(parity + 2 * m) % k];
                let b = sorted[(parity + 2 * m + 1) % k];
                (a, b, sweep_ccw(angle[a], angle[b]))
            })
            .collect()
    };
    let score = |arcs: &[(usize, usize, f64)]| {
        arcs.iter()
            .map(|&(a, _, s)| insideness(tri, &ls.point_at(angle[a] + 0.5 * s)))
            .fold(f64::INFINITY, f64::min)
    };
    let even = arcs_for(0);
    let odd = arcs_for(1);
    let pairs = if k == 2 || score(&even) >= score(&odd) {
        // With two transitions both parities name the same endpoints; pick the arc
        // whose midpoint lies inside.
        if k == 2 {
            let (a, b) = (sorted[0], sorted[1]);
            let fwd = sweep_ccw(angle[a], angle[b]);
            let bwd = sweep_ccw(angle[b], angle[a]);
            let in_fwd = insideness(tri, &ls.point_at(angle[a] + 0.5 * fwd));
            let in_bwd = insideness(tri, &ls.point_at(angle[b] + 0.5 * bwd));
            if in_fwd >= in_bwd {
                vec![(a, b, fwd)]
            } else {
                vec![(b, a, bwd)]
            }
        } else {
            even
        }
    } else {
        odd
    };

    let m = walk.len();
    let mut partner = vec![usize::MAX; m];
    let mut arc_of = vec![(0usize, false); m];
    for (idx, &(a, b, _)) in pairs.iter().enumerate() {
        partner[a] = b;
        partner[b] = a;
        arc_of[a] = (idx, true);
        arc_of[b] = (idx, false);
    }

    let n_sub = opts.n_sub;
    let arc_points = |from: usize| -> Vec<Point2<f64>> {
        // Interior chord points of the arc leaving node `from`.
        let (idx, forward) = arc_of[from];
        let (a, _, sweep) = pairs[idx];
        (1..n_sub)
            .map(|j| {
                let s = if forward { j } else { n_sub - j } as f64 / n_sub as f64;
                ls.point_at(angle[a] + s * sweep)
            })
            .collect()
    };

    let scale = tri.iter().map(|p| (p - tri[0]).norm()).fold(0.0, f64::max);
    let mut polygons = Vec::new();
    let mut chords = Vec::new();
    for domain in Domain::BULK {
        let mut visited = vec![false; m];
        for start in 0..m {
            if visited[start] || walk.labels[start] != domain {
                continue;
            }
            let mut poly = Vec::new();
            let mut seg = start;
            let mut guard = 0;
            loop {
                guard += 1;
                if guard > 4 * m || visited[seg] {
                    return Err(GeometryError::Topology(element));
                }
                visited[seg] = true;
                poly.push(walk.nodes[seg]);
                let next = (seg + 1) % m;
                let next_seg = if walk.labels[next] == domain {
                    next
                } else {
                    let q = partner[next];
                    if q == usize::MAX || walk.labels[q] != domain {
                        return Err(GeometryError::Topology(element));
                    }
                    let mut path = vec![walk.nodes[next]];
                    path.extend(arc_points(next));
                    path.push(walk.nodes[q]);
                    if domain == Domain::Inner {
                        chords.extend(path.windows(2).map(|w| [w[0], w[1]]));
                    }
                    poly.extend_from_slice(&path[..path.len() - 1]);
                    q
                };
                if next_seg == start {
                    break;
                }
                seg = next_seg;
            }
            polygons.push(CutPolygon { domain, vertices: simplify(poly, scale) });
        }
    }

    let mut bulk = [QuadratureRule::default(), QuadratureRule::default()];
    let mut chord_measures = [0.0; 3];
    for poly in &polygons {
        if poly.vertices.len() < 3 {
            continue;
        }
        let slot = poly.domain.bulk_slot();
        chord_measures[poly.domain.index()] += polygon_area(&poly.vertices);
        for t in triangulate(&poly.vertices).ok_or(GeometryError::Topology(element))? {
            bulk[slot].extend(&triangle_rule(&t, opts.q_order));
        }
    }
    chord_measures[0] = chords.iter().map(|c| (c[1] - c[0]).norm()).sum();

    let r = ls.radius;
    let arcs: Vec<Arc> = pairs.iter().map(|&(a, _, sweep)| Arc { start: angle[a], sweep }).collect();
    let sub_angle = |a: &Arc| a.sweep / n_sub as f64;
    let segment_area: f64 = arcs
        .iter()
        .map(|a| {
            let alpha = sub_angle(a);
            n_sub as f64 * 0.5 * r * r * (alpha - alpha.sin())
        })
        .sum();
    let inner = chord_measures[Domain::Inner.index()] + segment_area;
    let arc_length: f64 = arcs.iter().map(|a| r * a.sweep).sum();
    let measures = [arc_length, area - inner, inner];

    // Slivers below round-off go to the other side.
    if measures[Domain::Inner.index()] < 1e-14 * area {
        return Ok(uncut(Location::Outer));
    }
    if measures[Domain::Outer.index()] < 1e-14 * area {
        return Ok(uncut(Location::Inner));
    }

    let (gx, gw) = gauss_legendre(points_for_degree(opts.q_order));
    let mut interface = Vec::new();
    for a in &arcs {
        let da = sub_angle(a);
        for j in 0..n_sub {
            let t0 = a.start + j as f64 * da;
            for (x, w) in gx.iter().zip(&gw) {
                let theta = t0 + 0.5 * (x + 1.0) * da;
                let normal = Vector2::new(theta.cos(), theta.sin());
                interface.push(InterfacePoint {
                    point: ls.center + normal * r,
                    weight: 0.5 * w * da * r,
                    normal,
                });
            }
        }
    }

    Ok(ElementCut {
        element,
        location: Location::Cut,
        bulk,
        interface,
        arcs,
        chords,
        polygons,
        measures,
        chord_measures,
    })
}

/// Splits a face at the circle and builds Gauss rules on each piece.
pub fn build_face_cut(
    ls: &LevelSet,
    face: usize,
    ends: &[Point2<f64>; 2],
    face_normal: &Vector2<f64>,
    q_order: usize,
) -> FaceCut {
    let [a, b] = *ends;
    let mut cuts = vec![a];
    for t in ls.edge_circle_intersections(&a, &b) {
        if t > 1e-12 && t < 1.0 - 1e-12 {
            cuts.push(ls.project(&(a + (b - a) * t)));
        }
    }
    cuts.push(b);
    let mut pieces: Vec<(Domain, [Point2<f64>; 2])> = Vec::new();
    for w in cuts.windows(2) {
        let mid = w[0] + (w[1] - w[0]) * 0.5;
        let d = Domain::of_sign(ls.signed_distance(&mid));
        match pieces.last_mut() {
            // Tangent touch points do not split a side.
            Some((last, seg)) if *last == d => seg[1] = w[1],
            _ => pieces.push((d, [w[0], w[1]])),
        }
    }
    let mut rules = [QuadratureRule::default(), QuadratureRule::default()];
    let mut measures = [0.0; 2];
    for (d, seg) in &pieces {
        rules[d.bulk_slot()].extend(&segment_rule(&seg[0], &seg[1], q_order));
        measures[d.bulk_slot()] += (seg[1] - seg[0]).norm();
    }
    let crossings = pieces
        .windows(2)
        .map(|w| {
            let p = w[0].1[1];
            let n = ls.normal(&p);
            let t = Vector2::new(-n.y, n.x);
            let conormal = if t.dot(face_normal) >= 0.0 { t } else { -t };
            Crossing { point: p, conormal }
        })
        .collect();
    FaceCut { face, pieces, rules, crossings, measures }
}

/// Cut data for every element and face of a background mesh.
#[derive(Debug, Clone)]
pub struct CutGeometry {
    pub level_set: LevelSet,
    pub options: CutOptions,
    pub elements: Vec<ElementCut>,
    pub faces: Vec<FaceCut>,
}

impl CutGeometry {
    pub fn build(mesh: &BackgroundMesh, level_set: LevelSet, options: CutOptions) -> Result<Self, GeometryError> {
        let clearance = level_set.clearance(mesh.domain());
        if clearance <= 0.0 {
            return Err(GeometryError::CircleLeavesBox(clearance));
        }
        for (v, p) in mesh.vertices().iter().enumerate() {
            if level_set.signed_distance(p).abs() <= 1e-12 * level_set.radius {
                return Err(GeometryError::InterfaceThroughVertex(v));
            }
        }
        let elements = (0..mesh.n_elements())
            .map(|t| build_element_cut(&level_set, t, &mesh.triangle(t), options))
            .collect::<Result<Vec<_>, _>>()?;
        let faces = mesh
            .faces()
            .iter()
            .enumerate()
            .map(|(id, f)| build_face_cut(&level_set, id, &mesh.face_points(id), &f.normal, options.q_order))
            .collect();
        Ok(Self { level_set, options, elements, faces })
    }

    pub fn element(&self, t: usize) -> &ElementCut {
        &self.elements[t]
    }

    pub fn face(&self, f: usize) -> &FaceCut {
        &self.faces[f]
    }

    /// Sum of exact measures over all elements.
    pub fn total_measure(&self, domain: Domain) -> f64 {
        self.elements.iter().map(|e| e.measure(domain)).sum()
    }

    /// Sum of chord-polygon measures over all elements.
    pub fn total_chord_measure(&self, domain: Domain) -> f64 {
        self.elements.iter().map(|e| e.chord_measure(domain)).sum()
    }

    /// Plain-text polylines of all cut pieces, one per line.
    pub fn polyline_dump(&self) -> String {
        let mut s = String::new();
        for e in self.elements.iter().filter(|e| e.is_cut()) {
            for p in &e.polygons {
                let _ = write!(s, "element {} domain {}", e.element, p.domain.index());
                for v in &p.vertices {
                    let _ = write!(s, " {} {}", v.x, v.y);
                }
                s.push('\n');
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> Point2<f64> {
        Point2::new(x, y)
    }

    #[test]
    fn signed_distance_examples() {
        let ls = LevelSet::unit_circle();
        assert_eq!(ls.signed_distance(&p(0.0, 0.0)), -1.0);
        assert_eq!(ls.signed_distance(&p(1.0, 0.0)), 0.0);
        assert!((ls.signed_distance(&p(1.5, 1.5)) - 1.121320343559643).abs() < 1e-12);
        assert!(LevelSet::new(p(0.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn classification_examples() {
        let ls = LevelSet::unit_circle();
        assert_eq!(ls.classify_element(&[p(0.0, 0.0), p(0.1, 0.0), p(0.0, 0.1)]), Location::Inner);
        assert_eq!(ls.classify_element(&[p(0.9, 0.0), p(1.1, 0.0), p(1.0, 0.2)]), Location::Cut);
        assert_eq!(ls.classify_element(&[p(2.0, 2.0), p(3.0, 2.0), p(2.0, 3.0)]), Location::Outer);
        // All vertices outside, one edge crossing the disk twice.
        assert_eq!(ls.classify_element(&[p(-2.0, 0.5), p(2.0, 0.5), p(0.0, 3.0)]), Location::Cut);
        // Vertex on the circle, rest outside, no entry: only touches.
        assert_eq!(ls.classify_element(&[p(1.0, 0.0), p(2.0, 0.0), p(2.0, 1.0)]), Location::Outer);
        // Circle strictly inside a large triangle.
        assert_eq!(ls.classify_element(&[p(-5.0, -5.0), p(5.0, -5.0), p(0.0, 5.0)]), Location::Cut);
    }

    #[test]
    fn edge_intersection_examples() {
        let ls = LevelSet::unit_circle();
        let r = ls.edge_circle_intersections(&p(0.0, -2.0), &p(0.0, 2.0));
        assert_eq!(r.len(), 2);
        assert!((r[0] - 0.25).abs() < 1e-15 && (r[1] - 0.75).abs() < 1e-15);
        assert!(ls.edge_circle_intersections(&p(2.0, 0.0), &p(3.0, 0.0)).is_empty());
        assert_eq!(ls.edge_circle_intersections(&p(-2.0, 1.0), &p(2.0, 1.0)), vec![0.5]);
    }

    #[test]
    fn interior_rule_sums_to_area() {
        let ls = LevelSet::unit_circle();
        let tri = [p(0.0, 0.0), p(0.1, 0.0), p(0.1, 0.1)];
        let cut = build_element_cut(&ls, 0, &tri, CutOptions { n_sub: 4, q_order: 2 }).unwrap();
        assert_eq!(cut.location, Location::Inner);
        assert!((cut.bulk_rule(Domain::Inner).total_weight() - 0.005).abs() < 1e-17);
        assert!(cut.bulk_rule(Domain::Outer).is_empty());
    }

    #[test]
    fn circle_inside_element_is_rejected() {
        let ls = LevelSet::unit_circle();
        let tri = [p(-5.0, -5.0), p(5.0, -5.0), p(0.0, 5.0)];
        assert_eq!(
            build_element_cut(&ls, 7, &tri, CutOptions::default()).unwrap_err(),
            GeometryError::CircleInsideElement(7)
        );
    }

    fn reference_geometry(h: f64, opts: CutOptions) -> CutGeometry {
        let mesh = BackgroundMesh::build(BoxDomain::default(), h).unwrap();
        CutGeometry::build(&mesh, LevelSet::unit_circle(), opts).unwrap()
    }

    #[test]
    fn global_measures_at_h_015() {
        let g = reference_geometry(0.15, CutOptions::default());
        assert!((g.total_chord_measure(Domain::Inner) - PI).abs() < 5e-3);
        assert!((g.total_chord_measure(Domain::Interface) - 2.0 * PI).abs() < 5e-3);
        assert!((g.total_measure(Domain::Inner) - PI).abs() < 1e-12);
        assert!((g.total_measure(Domain::Interface) - 2.0 * PI).abs() < 1e-12);
        assert!((g.total_measure(Domain::Outer) - (9.0 - PI)).abs() < 1e-11);
        let quad: f64 = g.elements.iter().map(|e| e.bulk_rule(Domain::Inner).total_weight()).sum();
        assert!((quad - g.total_chord_measure(Domain::Inner)).abs() < 1e-12);
        let iq: f64 = g.elements.iter().flat_map(|e| e.interface.iter().map(|q| q.weight)).sum();
        assert!((iq - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn chord_area_converges_quadratically() {
        let errs: Vec<f64> = [0.15, 0.075, 0.0375]
            .iter()
            .map(|&h| (reference_geometry(h, CutOptions::default()).total_chord_measure(Domain::Inner) - PI).abs())
            .collect();
        assert!(errs[0] / errs[1] >= 3.5 && errs[1] / errs[2] >= 3.5, "{errs:?}");
    }

    #[test]
    fn interface_points_on_circle_with_outward_normals() {
        let g = reference_geometry(0.3, CutOptions::default());
        let ls = g.level_set;
        for e in &g.elements {
            for q in &e.interface {
                assert!(ls.signed_distance(&q.point).abs() <= 1e-12);
                assert!((q.normal.norm() - 1.0).abs() <= 1e-12);
                assert!(q.normal.dot(&(q.point - ls.center)) > 0.0);
                assert!(q.weight > 0.0);
            }
            for c in &e.chords {
                // Inner region on the left: the centre sees the chord counter-clockwise.
                assert!((c[1] - c[0]).perp(&(ls.center - c[0])) > 0.0);
            }
        }
    }

    /// Moment of `x^a y^b` over a polygon by Green's theorem, integrated edge by edge.
    fn polygon_moment(poly: &[Point2<f64>], a: i32, b: i32) -> f64 {
        let n = poly.len();
        let (x, w) = gauss_legendre(12);
        (0..n)
            .map(|k| {
                let p0 = poly[k];
                let p1 = poly[(k + 1) % n];
                let dy = p1.y - p0.y;
                x.iter()
                    .zip(&w)
                    .map(|(s, ws)| {
                        let q = p0 + (p1 - p0) * (0.5 * (s + 1.0));
                        0.5 * ws * q.x.powi(a + 1) * q.y.powi(b) / f64::from(a + 1) * dy
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn bulk_rules_exact_on_polygons() {
        let ls = LevelSet::new(p(0.05, -0.02), 0.7).unwrap();
        let tri = [p(0.3, 0.2), p(0.9, 0.25), p(0.4, 0.8)];
        let q = 4;
        let cut = build_element_cut(&ls, 0, &tri, CutOptions { n_sub: 4, q_order: q }).unwrap();
        assert!(cut.is_cut());
        for d in Domain::BULK {
            for deg in 0..=q as i32 {
                for a in 0..=deg {
                    let b = deg - a;
                    let exact: f64 = cut
                        .polygons
                        .iter()
                        .filter(|poly| poly.domain == d)
                        .map(|poly| polygon_moment(&poly.vertices, a, b))
                        .sum();
                    let approx = cut.bulk_rule(d).integrate(|x| x.x.powi(a) * x.y.powi(b));
                    assert!((approx - exact).abs() < 1e-14, "{d:?} {a} {b}: {approx} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn exact_inner_area_against_sampling() {
        let ls = LevelSet::new(p(0.0, 0.0), 1.0).unwrap();
        let tri = [p(0.6, 0.3), p(1.3, 0.4), p(0.7, 1.1)];
        let cut = build_element_cut(&ls, 0, &tri, CutOptions::default()).unwrap();
        // Midpoint sampling on a fine grid over the bounding box.
        let n = 2000;
        let (x0, x1, y0, y1) = (0.6, 1.3, 0.3, 1.1);
        let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
        let mut inner = 0.0;
        for i in 0..n {
            for j in 0..n {
                let q = p(x0 + (i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy);
                if point_in_triangle(&tri, &q, 0.0) && ls.signed_distance(&q) <= 0.0 {
                    inner += dx * dy;
                }
            }
        }
        assert!((cut.measure(Domain::Inner) - inner).abs() < 1e-3 * signed_area(&tri), "{} vs {inner}", cut.measure(Domain::Inner));
    }

    #[test]
    fn face_cut_examples() {
        let ls = LevelSet::unit_circle();
        let n = Vector2::new(0.0, -1.0);
        let f = build_face_cut(&ls, 0, &[p(0.0, 0.0), p(0.3, 0.0)], &n, 2);
        assert_eq!(f.measure(Domain::Inner), 0.3);
        assert_eq!(f.measure(Domain::Outer), 0.0);
        let f = build_face_cut(&ls, 0, &[p(0.8, 0.0), p(1.2, 0.0)], &n, 2);
        assert!((f.measure(Domain::Inner) - 0.2).abs() < 1e-15);
        assert!((f.measure(Domain::Outer) - 0.2).abs() < 1e-15);
        assert_eq!(f.crossings.len(), 1);
        // Tangent at (1, 0): the co-normal is vertical and follows the face normal.
        let c = f.crossings[0];
        assert!((c.conormal - Vector2::new(0.0, -1.0)).norm() < 1e-15);
        let f = build_face_cut(&ls, 0, &[p(-2.0, 1.0), p(2.0, 1.0)], &n, 2);
        assert_eq!(f.measure(Domain::Outer), 4.0);
        assert!(f.crossings.is_empty());
    }

    #[test]
    fn interface_through_vertex_is_rejected() {
        let mesh = BackgroundMesh::build(BoxDomain::default(), 0.5).unwrap();
        let err = CutGeometry::build(&mesh, LevelSet::unit_circle(), CutOptions::default()).unwrap_err();
        assert!(matches!(err, GeometryError::InterfaceThroughVertex(_)));
    }

    proptest! {
        #[test]
        fn cut_measures_partition_the_triangle(
            cx in -0.5f64..0.5, cy in -0.5f64..0.5, r in 0.3f64..1.2,
            x0 in -1.0f64..1.0, y0 in -1.0f64..1.0, sx in 0.05f64..0.6, flip in any::<bool>(),
            n_sub in 1usize..6,
        ) {
            let ls = LevelSet::new(p(cx, cy), r).unwrap();
            let tri = if flip {
                [p(x0, y0), p(x0 + sx, y0 + sx), p(x0, y0 + sx)]
            } else {
                [p(x0, y0), p(x0 + sx, y0), p(x0 + sx, y0 + sx)]
            };
            let area = signed_area(&tri);
            let cut = build_element_cut(&ls, 0, &tri, CutOptions { n_sub, q_order: 3 }).unwrap();
            let w1 = cut.bulk_rule(Domain::Outer).total_weight();
            let w2 = cut.bulk_rule(Domain::Inner).total_weight();
            prop_assert!((w1 + w2 - area).abs() <= 1e-10 * area);
            prop_assert!((cut.measure(Domain::Outer) + cut.measure(Domain::Inner) - area).abs() <= 1e-10 * area);
            prop_assert!(cut.bulk_rule(Domain::Outer).weights.iter().chain(&cut.bulk_rule(Domain::Inner).weights).all(|&w| w > 0.0));
            prop_assert_eq!(cut.is_cut(), ls.classify_element(&tri) == Location::Cut);
            let arc: f64 = cut.interface.iter().map(|q| q.weight).sum();
            prop_assert!((arc - cut.measure(Domain::Interface)).abs() <= 1e-12);
            for q in &cut.interface {
                prop_assert!(ls.signed_distance(&q.point).abs() <= 1e-12);
                prop_assert!(insideness(&tri, &q.point) >= -1e-12);
            }
        }
    }
}
