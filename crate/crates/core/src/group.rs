//! Finite permutation groups and their actions on flat feature vectors.
//!
//! Convention: `compose(p, q)` applies `q` first, then `p`, so
//! `compose(p, q).map[i] == p.map[q.map[i]]`. Applying a permutation to a
//! vector moves the entry at index `i` to index `map[i]`, which is the
//! product with the permutation matrix `P[map[i]][i] = 1`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{EqcError, Result};

/// Default cap on group order.
pub const DEFAULT_MAX_ORDER: usize = 10_080;

/// A permutation of `0..n` stored as an index map.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Perm {
    map: Vec<usize>,
}

impl fmt::Debug for Perm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.map)
    }
}

impl TryFrom<Vec<usize>> for Perm {
    type Error = EqcError;

    fn try_from(map: Vec<usize>) -> Result<Self> {
        Perm::new(map)
    }
}

impl From<Perm> for Vec<usize> {
    fn from(p: Perm) -> Self {
        p.map
    }
}

impl Perm {
    /// Validates that `map` is a bijection on `0..map.len()`.
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        if n == 0 {
            return Err(EqcError::InvalidPermutation(map));
        }
        let mut seen = vec![false; n];
        for &j in &map {
            if j >= n || seen[j] {
                return Err(EqcError::InvalidPermutation(map));
            }
            seen[j] = true;
        }
        Ok(Perm { map })
    }

    pub fn identity(n: usize) -> Self {
        assert!(n >= 1, "identity permutation needs degree >= 1");
        Perm {
            map: (0..n).collect(),
        }
    }

    pub fn degree(&self) -> usize {
        self.map.len()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    /// Image of index `i`.
    #[inline]
    pub fn image(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Perm) -> Result<Perm> {
        if self.degree() != other.degree() {
            return Err(EqcError::DegreeMismatch {
                expected: self.degree(),
                got: other.degree(),
            });
        }
        Ok(Perm {
            map: other.map.iter().map(|&j| self.map[j]).collect(),
        })
    }

    pub fn inverse(&self) -> Perm {
        let mut inv = vec![0; self.degree()];
        for (i, &j) in self.map.iter().enumerate() {
            inv[j] = i;
        }
        Perm { map: inv }
    }

    /// Permute a vector: `out[map[i]] = v[i]`.
    pub fn apply<T: Copy + Default>(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.degree());
        let mut out = vec![T::default(); v.len()];
        for (i, &x) in v.iter().enumerate() {
            out[self.map[i]] = x;
        }
        out
    }

    /// Apply into a preallocated buffer.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        for (i, &x) in v.iter().enumerate() {
            out[self.map[i]] = x;
        }
    }

    /// Apply the inverse permutation: `out[i] = v[map[i]]`.
    pub fn apply_inverse<T: Copy>(&self, v: &[T]) -> Vec<T> {
        self.map.iter().map(|&j| v[j]).collect()
    }

    /// Dense permutation matrix, row-major.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.degree();
        let mut m = vec![vec![0.0; n]; n];
        for (i, &j) in self.map.iter().enumerate() {
            m[j][i] = 1.0;
        }
        m
    }

    /// Embed a permutation of `points.len()` elements into degree `degree`,
    /// acting on `points` and fixing everything else.
    pub fn embed(&self, points: &[usize], degree: usize) -> Result<Perm> {
        if points.len() != self.degree() {
            return Err(EqcError::DegreeMismatch {
                expected: points.len(),
                got: self.degree(),
            });
        }
        let mut map: Vec<usize> = (0..degree).collect();
        for (i, &pi) in points.iter().enumerate() {
            if pi >= degree {
                return Err(EqcError::InvalidGroup(format!(
                    "embedding point {pi} out of range for degree {degree}"
                )));
            }
            map[pi] = points[self.map[i]];
        }
        Perm::new(map)
    }
}

/// Multiply a dense matrix by a vector.
pub fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// A finite group of permutations, elements kept in lexicographic order.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GroupDocument", into = "GroupDocument")]
pub struct PermGroup {
    degree: usize,
    elements: Vec<Perm>,
    #[serde(skip)]
    index: HashMap<Perm, usize>,
}

impl PartialEq for PermGroup {
    fn eq(&self, other: &Self) -> bool {
        self.degree == other.degree && self.elements == other.elements
    }
}

/// JSON form `{degree, elements}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupDocument {
    pub degree: usize,
    pub elements: Vec<Vec<usize>>,
}

impl TryFrom<GroupDocument> for PermGroup {
    type Error = EqcError;

    fn try_from(doc: GroupDocument) -> Result<Self> {
        let elements = doc
            .elements
            .into_iter()
            .map(Perm::new)
            .collect::<Result<Vec<_>>>()?;
        PermGroup::from_elements(doc.degree, elements)
    }
}

impl From<PermGroup> for GroupDocument {
    fn from(g: PermGroup) -> Self {
        GroupDocument {
            degree: g.degree,
            elements: g.elements.into_iter().map(Vec::from).collect(),
        }
    }
}

/// Outcome of an exhaustive axiom check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub has_identity: bool,
    pub closed: bool,
    pub has_inverses: bool,
}

impl AxiomReport {
    pub fn all_hold(&self) -> bool {
        self.has_identity && self.closed && self.has_inverses
    }
}

impl PermGroup {
    /// Build from an explicit element list, verifying the group axioms.
    pub fn from_elements(degree: usize, elements: Vec<Perm>) -> Result<Self> {
        let g = Self::from_elements_unchecked(degree, elements)?;
        let report = g.verify_axioms();
        if !report.all_hold() {
            return Err(EqcError::InvalidGroup(format!(
                "element set fails group axioms: {report:?}"
            )));
        }
        Ok(g)
    }

    /// Build without checking closure. Degrees are still checked and
    /// duplicates removed. Intended for axiom-checking fixtures.
    pub fn from_elements_unchecked(degree: usize, mut elements: Vec<Perm>) -> Result<Self> {
        if elements.is_empty() {
            return Err(EqcError::InvalidGroup("empty element set".into()));
        }
        for e in &elements {
            if e.degree() != degree {
                return Err(EqcError::DegreeMismatch {
                    expected: degree,
                    got: e.degree(),
                });
            }
        }
        elements.sort();
        elements.dedup();
        Ok(Self::indexed(degree, elements))
    }

    fn indexed(degree: usize, elements: Vec<Perm>) -> Self {
        let index = elements
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        PermGroup {
            degree,
            elements,
            index,
        }
    }

    pub fn trivial(degree: usize) -> Self {
        Self::indexed(degree, vec![Perm::identity(degree)])
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[Perm] {
        &self.elements
    }

    pub fn contains(&self, p: &Perm) -> bool {
        self.index.contains_key(p)
    }

    pub fn index_of(&self, p: &Perm) -> Option<usize> {
        self.index.get(p).copied()
    }

    /// Position of the identity in the canonical ordering (always 0 for a
    /// valid group, since the identity is lexicographically smallest).
    pub fn identity_index(&self) -> usize {
        self.index_of(&Perm::identity(self.degree))
            .expect("group contains identity")
    }

    pub fn verify_axioms(&self) -> AxiomReport {
        let has_identity = self.contains(&Perm::identity(self.degree));
        let closed = self.elements.iter().all(|a| {
            self.elements
                .iter()
                .all(|b| self.contains(&a.compose(b).expect("same degree")))
        });
        let has_inverses = self.elements.iter().all(|a| self.contains(&a.inverse()));
        AxiomReport {
            has_identity,
            closed,
            has_inverses,
        }
    }

    /// True iff every element of `self` lies in `other`.
    pub fn is_subgroup_of(&self, other: &PermGroup) -> bool {
        self.degree == other.degree && self.elements.iter().all(|p| other.contains(p))
    }

    pub fn to_document(&self) -> GroupDocument {
        self.clone().into()
    }
}

/// Smallest group containing `generators`, by closure under left
/// multiplication with the generators.
pub fn generate_group(degree: usize, generators: &[Perm], max_order: usize) -> Result<PermGroup> {
    for g in generators {
        if g.degree() != degree {
            return Err(EqcError::DegreeMismatch {
                expected: degree,
                got: g.degree(),
            });
        }
    }
    let id = Perm::identity(degree);
    let mut seen: HashSet<Perm> = HashSet::from([id.clone()]);
    let mut queue = VecDeque::from([id]);
    while let Some(x) = queue.pop_front() {
        for s in generators {
            let y = s.compose(&x)?;
            if !seen.contains(&y) {
                if seen.len() >= max_order {
                    return Err(EqcError::GroupCapExceeded { cap: max_order });
                }
                seen.insert(y.clone());
                queue.push_back(y);
            }
        }
    }
    let mut elements: Vec<Perm> = seen.into_iter().collect();
    elements.sort();
    Ok(PermGroup::indexed(degree, elements))
}

/// The n-cycle `i -> i+1 mod n`.
pub fn cycle(n: usize) -> Perm {
    Perm {
        map: (0..n).map(|i| (i + 1) % n).collect(),
    }
}

/// The reversal `i -> n-1-i`.
pub fn reversal(n: usize) -> Perm {
    Perm {
        map: (0..n).rev().collect(),
    }
}

/// The transposition of `a` and `b` in degree `n`.
pub fn transposition(n: usize, a: usize, b: usize) -> Perm {
    let mut map: Vec<usize> = (0..n).collect();
    map.swap(a, b);
    Perm { map }
}

pub fn cyclic_group(n: usize) -> Result<PermGroup> {
    if n == 0 {
        return Err(EqcError::InvalidGroup("cyclic group needs n >= 1".into()));
    }
    generate_group(n, &[cycle(n)], DEFAULT_MAX_ORDER.max(n))
}

/// Rotations and reflections of a regular n-gon, order 2n. Needs n >= 3,
/// below which the action on n points is not faithful.
pub fn dihedral_group(n: usize) -> Result<PermGroup> {
    if n < 3 {
        return Err(EqcError::InvalidGroup(format!(
            "dihedral group of order 2n acts faithfully on n >= 3 points, got n = {n}"
        )));
    }
    generate_group(n, &[cycle(n), reversal(n)], DEFAULT_MAX_ORDER.max(2 * n))
}

pub fn symmetric_group(n: usize, max_order: usize) -> Result<PermGroup> {
    if n == 0 {
        return Err(EqcError::InvalidGroup("symmetric group needs n >= 1".into()));
    }
    let mut fact: usize = 1;
    for k in 2..=n {
        fact = fact.saturating_mul(k);
        if fact > max_order {
            return Err(EqcError::GroupCapExceeded { cap: max_order });
        }
    }
    if n == 1 {
        return Ok(PermGroup::trivial(1));
    }
    generate_group(n, &[transposition(n, 0, 1), cycle(n)], max_order)
}

/// Group selection as it appears in configs: a name such as `"C5"`,
/// `"D10"`, `"S3"`, `"trivial"`, `"declared"` (the environment's own
/// symmetry group) or an explicit generator list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupSpec {
    Named(String),
    Generators { generators: Vec<Perm> },
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupSpec::Named(s) => write!(f, "{s}"),
            GroupSpec::Generators { generators } => write!(f, "<{} generators>", generators.len()),
        }
    }
}

impl GroupSpec {
    pub fn named(s: &str) -> Self {
        GroupSpec::Named(s.to_string())
    }

    /// Resolve into a group of the given `degree`. Named families act on
    /// `orbit` (the points of the environment's primary symmetric set),
    /// embedded into `degree` when the orbit is a strict subset.
    pub fn resolve(
        &self,
        degree: usize,
        orbit: &[usize],
        declared: &[Perm],
        max_order: usize,
    ) -> Result<PermGroup> {
        match self {
            GroupSpec::Generators { generators } => generate_group(degree, generators, max_order),
            GroupSpec::Named(name) => {
                let lower = name.to_ascii_lowercase();
                if lower == "trivial" || lower == "e" {
                    return Ok(PermGroup::trivial(degree));
                }
                if lower == "declared" {
                    return generate_group(degree, declared, max_order);
                }
                let (family, count) = name.split_at(1);
                let count: usize = count.parse().map_err(|_| {
                    EqcError::InvalidConfig(format!("unknown group name {name:?}"))
                })?;
                let (base, points) = match family {
                    "C" | "c" => (cyclic_group(count)?, count),
                    "D" | "d" => {
                        if !count.is_multiple_of(2) {
                            return Err(EqcError::InvalidConfig(format!(
                                "dihedral groups are named by order, got {name:?}"
                            )));
                        }
                        (dihedral_group(count / 2)?, count / 2)
                    }
                    "S" | "s" => (symmetric_group(count, max_order)?, count),
                    _ => {
                        return Err(EqcError::InvalidConfig(format!(
                            "unknown group family in {name:?}"
                        )))
                    }
                };
                if base.order() > max_order {
                    return Err(EqcError::GroupCapExceeded { cap: max_order });
                }
                if points == degree {
                    return Ok(base);
                }
                if points == orbit.len() {
                    let elements = base
                        .elements()
                        .iter()
                        .map(|p| p.embed(orbit, degree))
                        .collect::<Result<Vec<_>>>()?;
                    return PermGroup::from_elements(degree, elements);
                }
                Err(EqcError::InvalidConfig(format!(
                    "group {name} acts on {points} points, environment has degree {degree} \
                     with a symmetric orbit of {}",
                    orbit.len()
                )))
            }
        }
    }
}

/// One block of a flat feature encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Block {
    /// `slabs` consecutive sub-blocks of `width` features, permuted as units.
    Symmetric { slabs: usize, width: usize },
    /// Features that every group element leaves in place.
    Fixed { width: usize },
}

impl Block {
    pub fn width(&self) -> usize {
        match *self {
            Block::Symmetric { slabs, width } => slabs * width,
            Block::Fixed { width } => width,
        }
    }
}

/// Ordered block structure of an observation or action vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    blocks: Vec<Block>,
}

impl FeatureLayout {
    pub fn new(blocks: Vec<Block>) -> Self {
        FeatureLayout { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn total_width(&self) -> usize {
        self.blocks.iter().map(Block::width).sum()
    }

    /// Slab count shared by every symmetric block, or `None` if there are
    /// no symmetric blocks.
    pub fn symmetric_degree(&self) -> Result<Option<usize>> {
        let mut degree = None;
        for b in &self.blocks {
            if let Block::Symmetric { slabs, .. } = *b {
                match degree {
                    None => degree = Some(slabs),
                    Some(d) if d != slabs => {
                        return Err(EqcError::DegreeMismatch {
                            expected: d,
                            got: slabs,
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(degree)
    }

    /// Append another layout's blocks.
    pub fn extend(&mut self, other: &FeatureLayout) {
        self.blocks.extend_from_slice(&other.blocks);
    }

    pub fn push(&mut self, block: Block) {
        self.blocks.push(block);
    }
}

/// Lift a permutation of slabs to an index permutation of the whole layout.
pub fn lift_to_features(p: &Perm, layout: &FeatureLayout) -> Result<Perm> {
    let mut map = Vec::with_capacity(layout.total_width());
    let mut offset = 0;
    for block in layout.blocks() {
        match *block {
            Block::Fixed { width } => {
                map.extend(offset..offset + width);
            }
            Block::Symmetric { slabs, width } => {
                if slabs != p.degree() {
                    return Err(EqcError::DegreeMismatch {
                        expected: slabs,
                        got: p.degree(),
                    });
                }
                for i in 0..slabs {
                    let target = offset + p.image(i) * width;
                    map.extend(target..target + width);
                }
            }
        }
        offset += block.width();
    }
    if map.is_empty() {
        return Err(EqcError::InvalidGroup("empty feature layout".into()));
    }
    Ok(Perm { map })
}

/// A group together with its lifted actions on observations and actions.
#[derive(Clone, Debug)]
pub struct SymmetryRep {
    group: PermGroup,
    obs_layout: FeatureLayout,
    act_layout: FeatureLayout,
    obs_perms: Vec<Perm>,
    act_perms: Vec<Perm>,
    identity: usize,
}

impl SymmetryRep {
    pub fn new(group: PermGroup, obs_layout: FeatureLayout, act_layout: FeatureLayout) -> Result<Self> {
        let obs_perms = lift_all(&group, &obs_layout)?;
        let act_perms = lift_all(&group, &act_layout)?;
        let identity = group.identity_index();
        Ok(SymmetryRep {
            group,
            obs_layout,
            act_layout,
            obs_perms,
            act_perms,
            identity,
        })
    }

    pub fn group(&self) -> &PermGroup {
        &self.group
    }

    pub fn order(&self) -> usize {
        self.group.order()
    }

    pub fn obs_layout(&self) -> &FeatureLayout {
        &self.obs_layout
    }

    pub fn act_layout(&self) -> &FeatureLayout {
        &self.act_layout
    }

    /// L_g for the element at canonical position `i`.
    pub fn obs_perm(&self, i: usize) -> &Perm {
        &self.obs_perms[i]
    }

    /// K_g for the element at canonical position `i`.
    pub fn act_perm(&self, i: usize) -> &Perm {
        &self.act_perms[i]
    }

    pub fn identity_index(&self) -> usize {
        self.identity
    }

    /// Exhaustive check that both lifts are homomorphisms.
    pub fn is_homomorphism(&self) -> bool {
        let els = self.group.elements();
        for (i, a) in els.iter().enumerate() {
            for (j, b) in els.iter().enumerate() {
                let ab = a.compose(b).expect("same degree");
                let k = match self.group.index_of(&ab) {
                    Some(k) => k,
                    None => return false,
                };
                let obs = self.obs_perms[i].compose(&self.obs_perms[j]).expect("same degree");
                let act = self.act_perms[i].compose(&self.act_perms[j]).expect("same degree");
                if obs != self.obs_perms[k] || act != self.act_perms[k] {
                    return false;
                }
            }
        }
        self.obs_perms[self.identity].is_identity() && self.act_perms[self.identity].is_identity()
    }
}

fn lift_all(group: &PermGroup, layout: &FeatureLayout) -> Result<Vec<Perm>> {
    group
        .elements()
        .iter()
        .map(|g| {
            if layout.blocks().iter().all(|b| matches!(b, Block::Fixed { .. })) {
                Ok(Perm::identity(layout.total_width()))
            } else {
                lift_to_features(g, layout)
            }
        })
        .collect()
}
