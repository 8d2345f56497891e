//! Node sets for mesh-free collocation.
//!
//! A [`PointCloud`] stores coordinates, a [`NodeTag`] per node and an outward
//! unit normal per boundary node. Generators always return clouds in canonical
//! order: internal nodes first, then Dirichlet, Neumann and Robin blocks.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown tag `{token}`")]
    UnknownTag { line: usize, token: String },
    #[error("node file contains no nodes")]
    EmptyCloud,
    #[error("invalid cloud: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Internal,
    Dirichlet,
    Neumann,
    Robin,
}

impl NodeKind {
    fn rank(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Internal => "internal",
            NodeKind::Dirichlet => "dirichlet",
            NodeKind::Neumann => "neumann",
            NodeKind::Robin => "robin",
        })
    }
}

impl FromStr for NodeKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "internal" => Ok(NodeKind::Internal),
            "dirichlet" => Ok(NodeKind::Dirichlet),
            "neumann" => Ok(NodeKind::Neumann),
            "robin" => Ok(NodeKind::Robin),
            _ => Err(()),
        }
    }
}

/// Named boundary segments of the two benchmark geometries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Segment {
    Inlet,
    Outlet,
    Wall,
    Blowing,
    Suction,
    Top,
    Bottom,
    Left,
    Right,
}

impl Segment {
    pub const ALL: [Segment; 9] = [
        Segment::Inlet,
        Segment::Outlet,
        Segment::Wall,
        Segment::Blowing,
        Segment::Suction,
        Segment::Top,
        Segment::Bottom,
        Segment::Left,
        Segment::Right,
    ];
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Segment::Inlet => "inlet",
            Segment::Outlet => "outlet",
            Segment::Wall => "wall",
            Segment::Blowing => "blowing",
            Segment::Suction => "suction",
            Segment::Top => "top",
            Segment::Bottom => "bottom",
            Segment::Left => "left",
            Segment::Right => "right",
        })
    }
}

impl FromStr for Segment {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Segment::ALL.iter().copied().find(|seg| seg.to_string() == s.to_ascii_lowercase()).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeTag {
    pub kind: NodeKind,
    pub segment: Option<Segment>,
    /// Robin coefficient; `Some` exactly for Robin nodes.
    pub beta: Option<f64>,
}

impl NodeTag {
    pub const INTERNAL: NodeTag = NodeTag { kind: NodeKind::Internal, segment: None, beta: None };

    pub fn boundary(kind: NodeKind, segment: Segment) -> Self {
        assert!(kind != NodeKind::Internal && kind != NodeKind::Robin);
        NodeTag { kind, segment: Some(segment), beta: None }
    }

    pub fn robin(segment: Segment, beta: f64) -> Self {
        NodeTag { kind: NodeKind::Robin, segment: Some(segment), beta: Some(beta) }
    }

    pub fn is_boundary(&self) -> bool {
        self.kind != NodeKind::Internal
    }

    pub fn validate(&self) -> Result<(), String> {
        match (self.kind, self.segment, self.beta) {
            (NodeKind::Internal, None, None) => Ok(()),
            (NodeKind::Internal, _, _) => Err("internal node with segment or beta".into()),
            (_, None, _) => Err(format!("{} node without a segment", self.kind)),
            (NodeKind::Robin, _, Some(b)) if b.is_finite() => Ok(()),
            (NodeKind::Robin, _, _) => Err("robin node needs a finite beta".into()),
            (_, _, Some(_)) => Err(format!("{} node carries a beta", self.kind)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub internal: usize,
    pub dirichlet: usize,
    pub neumann: usize,
    pub robin: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.internal + self.dirichlet + self.neumann + self.robin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub coords: Vec<[f64; 2]>,
    pub tags: Vec<NodeTag>,
    /// Unit outward normals; `[0, 0]` for internal nodes.
    pub normals: Vec<[f64; 2]>,
}

impl PointCloud {
    pub fn new(coords: Vec<[f64; 2]>, tags: Vec<NodeTag>, normals: Vec<[f64; 2]>) -> Result<Self, CloudError> {
        let c = PointCloud { coords, tags, normals };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn counts(&self) -> Counts {
        let mut c = Counts::default();
        for t in &self.tags {
            match t.kind {
                NodeKind::Internal => c.internal += 1,
                NodeKind::Dirichlet => c.dirichlet += 1,
                NodeKind::Neumann => c.neumann += 1,
                NodeKind::Robin => c.robin += 1,
            }
        }
        c
    }

    pub fn n_internal(&self) -> usize {
        self.tags.iter().filter(|t| t.kind == NodeKind::Internal).count()
    }

    /// Checks tags, normals and coincidence (coincidence via sort-and-sweep).
    pub fn validate(&self) -> Result<(), CloudError> {
        let n = self.coords.len();
        if self.tags.len() != n || self.normals.len() != n {
            return Err(CloudError::Invalid("coords, tags and normals differ in length".into()));
        }
        for (i, (t, nrm)) in self.tags.iter().zip(&self.normals).enumerate() {
            t.validate().map_err(|m| CloudError::Invalid(format!("node {i}: {m}")))?;
            if !self.coords[i].iter().all(|v| v.is_finite()) {
                return Err(CloudError::Invalid(format!("node {i}: non-finite coordinate")));
            }
            if t.is_boundary() {
                let len = (nrm[0] * nrm[0] + nrm[1] * nrm[1]).sqrt();
                if (len - 1.0).abs() > 1e-12 {
                    return Err(CloudError::Invalid(format!("node {i}: normal not unit length ({len})")));
                }
            }
        }
        if let Some((a, b)) = self.find_coincident() {
            return Err(CloudError::Invalid(format!("nodes {a} and {b} coincide")));
        }
        Ok(())
    }

    pub fn find_coincident(&self) -> Option<(usize, usize)> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.coords[a].partial_cmp(&self.coords[b]).unwrap());
        idx.windows(2).find(|w| self.coords[w[0]] == self.coords[w[1]]).map(|w| (w[0].min(w[1]), w[0].max(w[1])))
    }

    pub fn is_canonical(&self) -> bool {
        self.tags.windows(2).all(|w| w[0].kind.rank() <= w[1].kind.rank())
    }

    /// Node indices on `seg`, sorted along the segment (by x, then y).
    pub fn segment_nodes(&self, seg: Segment) -> Vec<usize> {
        let mut idx: Vec<usize> =
            (0..self.len()).filter(|&i| self.tags[i].segment == Some(seg)).collect();
        idx.sort_by(|&a, &b| {
            let (pa, pb) = (self.coords[a], self.coords[b]);
            pa[0].partial_cmp(&pb[0]).unwrap().then(pa[1].partial_cmp(&pb[1]).unwrap())
        });
        idx
    }

    pub fn segments_present(&self) -> Vec<Segment> {
        let mut s: Vec<Segment> = self.tags.iter().filter_map(|t| t.segment).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.coords {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    /// Applies `perm` so that node `k` of the result is node `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> PointCloud {
        PointCloud {
            coords: perm.iter().map(|&i| self.coords[i]).collect(),
            tags: perm.iter().map(|&i| self.tags[i]).collect(),
            normals: perm.iter().map(|&i| self.normals[i]).collect(),
        }
    }

    /// Stable sort into internal, Dirichlet, Neumann, Robin blocks.
    /// Returns the reordered cloud and `perm` with `new[k] = old[perm[k]]`.
    pub fn reorder_canonical(&self) -> (PointCloud, Vec<usize>) {
        let mut perm: Vec<usize> = (0..self.len()).collect();
        perm.sort_by_key(|&i| self.tags[i].kind.rank());
        (self.permuted(&perm), perm)
    }

    pub fn save_nodes(&self, path: impl AsRef<Path>) -> Result<(), CloudError> {
        let f = std::fs::File::create(path)?;
        self.write_nodes(std::io::BufWriter::new(f))
    }

    pub fn write_nodes<W: Write>(&self, mut w: W) -> Result<(), CloudError> {
        writeln!(w, "# x y tag segment [nx ny] [beta]")?;
        for i in 0..self.len() {
            let [x, y] = self.coords[i];
            let t = self.tags[i];
            match t.segment {
                None => writeln!(w, "{x:?} {y:?} {} -", t.kind)?,
                Some(seg) => {
                    let [nx, ny] = self.normals[i];
                    write!(w, "{x:?} {y:?} {} {seg} {nx:?} {ny:?}", t.kind)?;
                    if let Some(b) = t.beta {
                        write!(w, " {b:?}")?;
                    }
                    writeln!(w)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_nodes(path: impl AsRef<Path>) -> Result<PointCloud, CloudError> {
        let f = std::fs::File::open(path)?;
        Self::read_nodes(std::io::BufReader::new(f))
    }

    pub fn read_nodes<R: BufRead>(r: R) -> Result<PointCloud, CloudError> {
        let mut coords = Vec::new();
        let mut tags = Vec::new();
        let mut normals = Vec::new();
        for (ln, line) in r.lines().enumerate() {
            let line_no = ln + 1;
            let line = line?;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let tok: Vec<&str> = content.split_whitespace().collect();
            let perr = |msg: String| CloudError::Parse { line: line_no, msg };
            if tok.len() < 4 {
                return Err(perr(format!("expected at least 4 fields, found {}", tok.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| perr(format!("invalid number `{s}`")));
            let x = num(tok[0])?;
            let y = num(tok[1])?;
            let kind: NodeKind = tok[2]
                .parse()
                .map_err(|_| CloudError::UnknownTag { line: line_no, token: tok[2].to_string() })?;
            let segment = if tok[3] == "-" {
                None
            } else {
                Some(tok[3].parse::<Segment>().map_err(|_| CloudError::UnknownTag {
                    line: line_no,
                    token: tok[3].to_string(),
                })?)
            };
            let (normal, beta) = match (kind, tok.len()) {
                (NodeKind::Internal, 4) => ([0.0, 0.0], None),
                (NodeKind::Internal, _) => return Err(perr("internal node takes no normal or beta".into())),
                (NodeKind::Robin, 7) => ([num(tok[4])?, num(tok[5])?], Some(num(tok[6])?)),
                (NodeKind::Robin, _) => return Err(perr("robin node needs `nx ny beta`".into())),
                (_, 6) => ([num(tok[4])?, num(tok[5])?], None),
                (_, _) => return Err(perr("boundary node needs `nx ny`".into())),
            };
            let tag = NodeTag { kind, segment, beta };
            tag.validate().map_err(perr)?;
            coords.push([x, y]);
            tags.push(tag);
            normals.push(normal);
        }
        if coords.is_empty() {
            return Err(CloudError::EmptyCloud);
        }
        PointCloud::new(coords, tags, normals)
    }
}

/// Regular `nx × ny` lattice on the unit square.
///
/// Corners on the top edge belong to `top`, the remaining corners to `bottom`.
pub fn make_unit_square_grid(nx: usize, ny: usize, top_kind: NodeKind) -> Result<PointCloud, CloudError> {
    if nx < 2 || ny < 2 {
        return Err(CloudError::InvalidSize(format!("grid must be at least 2x2, got {nx}x{ny}")));
    }
    if top_kind == NodeKind::Internal {
        return Err(CloudError::InvalidSize("top edge cannot be internal".into()));
    }
    let mut coords = Vec::with_capacity(nx * ny);
    let mut tags = Vec::with_capacity(nx * ny);
    let mut normals = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = i as f64 / (nx - 1) as f64;
            let y = j as f64 / (ny - 1) as f64;
            let (tag, n) = if j == ny - 1 {
                let tag = match top_kind {
                    NodeKind::Robin => NodeTag::robin(Segment::Top, 0.0),
                    k => NodeTag::boundary(k, Segment::Top),
                };
                (tag, [0.0, 1.0])
            } else if j == 0 {
                (NodeTag::boundary(NodeKind::Dirichlet, Segment::Bottom), [0.0, -1.0])
            } else if i == 0 {
                (NodeTag::boundary(NodeKind::Dirichlet, Segment::Left), [-1.0, 0.0])
            } else if i == nx - 1 {
                (NodeTag::boundary(NodeKind::Dirichlet, Segment::Right), [1.0, 0.0])
            } else {
                (NodeTag::INTERNAL, [0.0, 0.0])
            };
            coords.push([x, y]);
            tags.push(tag);
            normals.push(n);
        }
    }
    let cloud = PointCloud { coords, tags, normals };
    Ok(cloud.reorder_canonical().0)
}

/// Radical inverse of `i` in base `b`.
pub fn halton(mut i: u64, b: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// Nominal spacing `h` solving `lx·ly/h² + 2(lx+ly)/h = target`.
pub fn channel_spacing(lx: f64, ly: f64, target: usize) -> f64 {
    let p = lx + ly;
    let t = target as f64;
    let inv_h = (2.0 * p + (4.0 * p * p + 4.0 * t * lx * ly).sqrt()) / (2.0 * lx * ly);
    1.0 / inv_h
}

/// Slot extents `[x0, x1]` shared by the blowing and suction segments.
pub fn channel_slot(lx: f64, ly: f64) -> (f64, f64) {
    (lx / 2.0 - ly / 6.0, lx / 2.0 + ly / 6.0)
}

/// Scattered channel cloud on `[0,lx]×[0,ly]`.
///
/// Boundary nodes sit on a uniform lattice of spacing `h`; interior nodes are
/// drawn from a Halton sequence starting at `seed + 1`, rejecting candidates
/// closer than `h/2` to any accepted node or to the boundary.
pub fn make_channel_cloud(lx: f64, ly: f64, target_count: usize, seed: u64) -> Result<PointCloud, CloudError> {
    if !(lx > 0.0 && ly > 0.0) {
        return Err(CloudError::InvalidSize(format!("channel extents must be positive, got {lx}x{ly}")));
    }
    let h = channel_spacing(lx, ly, target_count.max(1));
    let nx = (lx / h).round() as usize;
    let ny = (ly / h).round() as usize;
    let (s0, s1) = channel_slot(lx, ly);
    let xs: Vec<f64> = (0..=nx).map(|i| lx * i as f64 / nx.max(1) as f64).collect();
    let slot_nodes = xs.iter().filter(|&&x| (s0..=s1).contains(&x)).count();
    if nx < 2 || ny < 2 || slot_nodes == 0 {
        return Err(CloudError::InvalidSize(format!(
            "target count {target_count} too small to resolve inlet, outlet, walls and both slots"
        )));
    }
    let mut coords = Vec::new();
    let mut tags = Vec::new();
    let mut normals = Vec::new();
    let mut push = |p: [f64; 2], t: NodeTag, n: [f64; 2]| {
        coords.push(p);
        tags.push(t);
        normals.push(n);
    };
    for j in 0..=ny {
        let y = ly * j as f64 / ny as f64;
        push([0.0, y], NodeTag::boundary(NodeKind::Dirichlet, Segment::Inlet), [-1.0, 0.0]);
    }
    for j in 1..ny {
        let y = ly * j as f64 / ny as f64;
        push([lx, y], NodeTag::boundary(NodeKind::Neumann, Segment::Outlet), [1.0, 0.0]);
    }
    for &x in &xs[1..] {
        let in_slot = (s0..=s1).contains(&x);
        let bottom = if in_slot { Segment::Blowing } else { Segment::Wall };
        let top = if in_slot { Segment::Suction } else { Segment::Wall };
        push([x, 0.0], NodeTag::boundary(NodeKind::Dirichlet, bottom), [0.0, -1.0]);
        push([x, ly], NodeTag::boundary(NodeKind::Dirichlet, top), [0.0, 1.0]);
    }
    let n_boundary = coords.len();
    if n_boundary >= target_count {
        return Err(CloudError::InvalidSize(format!(
            "target count {target_count} leaves no interior nodes after {n_boundary} boundary nodes"
        )));
    }
    let n_interior = target_count - n_boundary;
    let min_d2 = (0.5 * h) * (0.5 * h);
    let cell = 0.5 * h;
    let gx = (lx / cell).ceil() as usize + 1;
    let gy = (ly / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<[f64; 2]>> = vec![Vec::new(); gx * gy];
    let cell_of = |p: [f64; 2]| {
        let cx = ((p[0] / cell) as usize).min(gx - 1);
        let cy = ((p[1] / cell) as usize).min(gy - 1);
        (cx, cy)
    };
    for p in &coords {
        let (cx, cy) = cell_of(*p);
        grid[cy * gx + cx].push(*p);
    }
    let mut interior = Vec::with_capacity(n_interior);
    let mut i = seed + 1;
    let max_draws = 200 * (n_interior as u64 + 10);
    let mut draws = 0;
    while interior.len() < n_interior {
        if draws > max_draws {
            return Err(CloudError::InvalidSize(format!(
                "could not place {n_interior} interior nodes at separation {:.3e}",
                0.5 * h
            )));
        }
        draws += 1;
        let p = [halton(i, 2) * lx, halton(i, 3) * ly];
        i += 1;
        if p[0].min(lx - p[0]).min(p[1]).min(ly - p[1]) < 0.5 * h {
            continue;
        }
        let (cx, cy) = cell_of(p);
        let mut ok = true;
        'outer: for yy in cy.saturating_sub(1)..=(cy + 1).min(gy - 1) {
            for xx in cx.saturating_sub(1)..=(cx + 1).min(gx - 1) {
                for q in &grid[yy * gx + xx] {
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                    if d2 < min_d2 {
                        ok = false;
                        break 'outer;
                    }
                }
            }
        }
        if ok {
            grid[cy * gx + cx].push(p);
            interior.push(p);
        }
    }
    let mut all_coords = interior.clone();
    all_coords.extend_from_slice(&coords);
    let mut all_tags = vec![NodeTag::INTERNAL; interior.len()];
    all_tags.extend_from_slice(&tags);
    let mut all_normals = vec![[0.0, 0.0]; interior.len()];
    all_normals.extend_from_slice(&normals);
    let cloud = PointCloud { coords: all_coords, tags: all_tags, normals: all_normals };
    Ok(cloud.reorder_canonical().0)
}
