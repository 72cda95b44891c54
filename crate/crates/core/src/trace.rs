//! Execution traces.
//!
//! A model's first run records parameters into an [`UntypedTrace`]: one
//! heap entry per variable, each holding a dynamically-typed [`Variate`] and
//! found through a name-keyed hash index. Once every tilde statement has
//! executed, [`specialize`] regroups the entries by symbol into a
//! [`TypedTrace`] whose groups keep their values in one contiguous buffer of
//! a single concrete element type. Later runs read those buffers directly.

use std::collections::HashMap;
use std::ops::Range;

use thiserror::Error;

use crate::addressing::VarName;
use crate::distributions::{Bijector, DistError, Distribution, Variate};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("variable {0} not found in trace")]
    NotFound(VarName),
    #[error("variable {0} already present in trace")]
    Duplicate(VarName),
    #[error("cannot specialize symbol `{0}`: entries have different element types")]
    Specialization(String),
    #[error("symbol `{0}` is not in the typed trace; re-specialize from an untyped run")]
    UnknownSymbol(String),
    #[error("value for {name} has the wrong shape or type: {message}")]
    Shape { name: VarName, message: String },
    #[error("variable {0} is discrete and cannot be transformed or differentiated")]
    NotDifferentiable(VarName),
    #[error("invalid link state for {name}: {message}")]
    State { name: VarName, message: String },
    #[error("parameter vector has length {actual}, trace expects {expected}")]
    Length { expected: usize, actual: usize },
    #[error("log-probability increment is NaN")]
    NanLogp,
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Untyped,
    Typed,
}

/// Per-variable metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryMeta {
    pub name: VarName,
    pub dist: Distribution,
    pub linked: bool,
    /// 0-based insertion index across the whole trace.
    pub order: usize,
}

/// Borrowed view of one stored value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlotValue<'a> {
    Real(f64),
    Int(i64),
    Vector(&'a [f64]),
}

impl SlotValue<'_> {
    pub fn to_variate(self) -> Variate {
        match self {
            SlotValue::Real(x) => Variate::Real(x),
            SlotValue::Int(i) => Variate::Int(i),
            SlotValue::Vector(v) => Variate::Vector(v.to_vec()),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            SlotValue::Real(x) => std::slice::from_ref(x),
            SlotValue::Vector(v) => v,
            SlotValue::Int(_) => &[],
        }
    }
}

/// A stored value plus its link flag, as seen by the interpreter.
#[derive(Debug, Clone, Copy)]
pub struct Slot<'a> {
    pub value: SlotValue<'a>,
    pub linked: bool,
    /// Bijector recorded for a linked entry.
    pub bijector: Option<Bijector>,
}

/// Contiguous scalar run `sym[1] .. sym[n]` inside a typed group.
#[derive(Debug)]
pub struct DenseSlot<'a> {
    pub values: &'a [f64],
    pub linked: &'a [bool],
    pub dists: &'a mut [Distribution],
    /// Position of `sym[1]` in the flattened parameter vector, when the run
    /// is contiguous there too.
    pub flat_start: Option<usize>,
}

/// The log-probability accumulator shared by both trace kinds.
///
/// `-inf` is sticky: once reached, later finite increments leave it there.
/// A NaN increment is an error, never a silent rejection.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LogpAccumulator(f64);

impl LogpAccumulator {
    pub fn get(self) -> f64 {
        self.0
    }

    pub fn acc(&mut self, delta: f64) -> Result<(), TraceError> {
        if delta.is_nan() {
            return Err(TraceError::NanLogp);
        }
        if self.0 != f64::NEG_INFINITY {
            self.0 += delta;
        }
        Ok(())
    }

    pub fn reset(&mut self) {
        self.0 = 0.0;
    }

    pub fn reject(&mut self) {
        self.0 = f64::NEG_INFINITY;
    }
}

/// Storage operations the interpreter needs from a trace.
pub trait VarInfo {
    fn kind(&self) -> TraceKind;

    fn logp(&self) -> f64;

    fn acc_logp(&mut self, delta: f64) -> Result<(), TraceError>;

    fn reset_logp(&mut self);

    /// Overwrites the accumulator with `-inf`.
    fn reject(&mut self);

    fn contains(&self, vn: &VarName) -> bool;

    /// Looks up `vn`, records `dist` as its current distribution, and returns
    /// the stored value. `None` when the variable is absent.
    fn revisit(&mut self, vn: &VarName, dist: Distribution) -> Result<Option<Slot<'_>>, TraceError>;

    /// Adds a new, unlinked entry.
    fn insert(&mut self, vn: VarName, dist: Distribution, value: Variate) -> Result<(), TraceError>;

    /// Fast path for `sym[1..=n]` stored as one contiguous scalar run.
    fn dense(&mut self, _symbol: &str, _n: usize) -> Option<DenseSlot<'_>> {
        None
    }

    /// Range of `vn` in the flattened parameter vector.
    fn flat_range(&self, _vn: &VarName) -> Option<Range<usize>> {
        None
    }

    fn num_entries(&self) -> usize;

    /// Current stored (possibly unconstrained) value.
    fn get_value(&self, vn: &VarName) -> Result<Variate, TraceError>;

    /// All entries in insertion order with constrained-space values.
    fn snapshot(&self) -> Vec<(VarName, Variate)>;
}

fn update_dist(
    slot: &mut Distribution,
    name: &VarName,
    dist: Distribution,
    linked: bool,
) -> Result<(), TraceError> {
    if linked && slot.family() != dist.family() && slot.bijector()? != dist.bijector()? {
        return Err(TraceError::State {
            name: name.clone(),
            message: format!(
                "distribution changed from {} to {} while linked",
                slot.family(),
                dist.family()
            ),
        });
    }
    *slot = dist;
    Ok(())
}

fn shape_err(name: &VarName, message: impl Into<String>) -> TraceError {
    TraceError::Shape {
        name: name.clone(),
        message: message.into(),
    }
}

fn check_variate(name: &VarName, dist: &Distribution, value: &Variate) -> Result<(), TraceError> {
    match (dist.is_discrete(), dist.is_vector_valued(), value) {
        (true, _, Variate::Int(_)) | (false, false, Variate::Real(_)) => Ok(()),
        (false, true, Variate::Vector(v)) if v.len() == dist.dimension() => Ok(()),
        _ => Err(shape_err(
            name,
            format!("{value:?} does not fit {}", dist.family()),
        )),
    }
}

fn constrained(value: &Variate, linked: bool, dist: &Distribution) -> Result<Variate, TraceError> {
    if !linked {
        return Ok(value.clone());
    }
    let b = dist.bijector()?;
    Ok(match value {
        Variate::Real(y) => Variate::Real(b.inverse_scalar(*y)),
        Variate::Vector(y) => Variate::Vector(b.inverse(y)),
        Variate::Int(_) => value.clone(),
    })
}

// ---------------------------------------------------------------------------
// Untyped

#[derive(Debug, Clone)]
struct UntypedEntry {
    meta: EntryMeta,
    value: Variate,
}

/// Heterogeneous first-run trace.
#[derive(Debug, Clone, Default)]
pub struct UntypedTrace {
    entries: Vec<UntypedEntry>,
    index: HashMap<VarName, usize>,
    logp: LogpAccumulator,
}

impl UntypedTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&EntryMeta, &Variate)> {
        self.entries.iter().map(|e| (&e.meta, &e.value))
    }

    pub fn set_value(&mut self, vn: &VarName, value: Variate) -> Result<(), TraceError> {
        let i = *self.index.get(vn).ok_or_else(|| TraceError::NotFound(vn.clone()))?;
        let entry = &mut self.entries[i];
        let same = match (&entry.value, &value) {
            (Variate::Real(_), Variate::Real(_)) | (Variate::Int(_), Variate::Int(_)) => true,
            (Variate::Vector(a), Variate::Vector(b)) => a.len() == b.len(),
            _ => false,
        };
        if !same {
            return Err(shape_err(vn, format!("cannot replace {:?} with {value:?}", entry.value)));
        }
        entry.value = value;
        Ok(())
    }
}

impl VarInfo for UntypedTrace {
    fn kind(&self) -> TraceKind {
        TraceKind::Untyped
    }

    fn logp(&self) -> f64 {
        self.logp.get()
    }

    fn acc_logp(&mut self, delta: f64) -> Result<(), TraceError> {
        self.logp.acc(delta)
    }

    fn reset_logp(&mut self) {
        self.logp.reset()
    }

    fn reject(&mut self) {
        self.logp.reject()
    }

    fn contains(&self, vn: &VarName) -> bool {
        self.index.contains_key(vn)
    }

    fn revisit(&mut self, vn: &VarName, dist: Distribution) -> Result<Option<Slot<'_>>, TraceError> {
        let Some(&i) = self.index.get(vn) else {
            return Ok(None);
        };
        let entry = &mut self.entries[i];
        update_dist(&mut entry.meta.dist, vn, dist, entry.meta.linked)?;
        let value = match &entry.value {
            Variate::Real(x) => SlotValue::Real(*x),
            Variate::Int(k) => SlotValue::Int(*k),
            Variate::Vector(v) => SlotValue::Vector(v),
        };
        let bijector = if entry.meta.linked {
            Some(entry.meta.dist.bijector()?)
        } else {
            None
        };
        Ok(Some(Slot {
            value,
            linked: entry.meta.linked,
            bijector,
        }))
    }

    fn insert(&mut self, vn: VarName, dist: Distribution, value: Variate) -> Result<(), TraceError> {
        if self.index.contains_key(&vn) {
            return Err(TraceError::Duplicate(vn));
        }
        check_variate(&vn, &dist, &value)?;
        let order = self.entries.len();
        self.index.insert(vn.clone(), order);
        self.entries.push(UntypedEntry {
            meta: EntryMeta {
                name: vn,
                dist,
                linked: false,
                order,
            },
            value,
        });
        Ok(())
    }

    fn num_entries(&self) -> usize {
        self.entries.len()
    }

    fn get_value(&self, vn: &VarName) -> Result<Variate, TraceError> {
        self.index
            .get(vn)
            .map(|&i| self.entries[i].value.clone())
            .ok_or_else(|| TraceError::NotFound(vn.clone()))
    }

    fn snapshot(&self) -> Vec<(VarName, Variate)> {
        self.entries
            .iter()
            .map(|e| {
                let v = constrained(&e.value, e.meta.linked, &e.meta.dist)
                    .expect("linked entries always have a bijector");
                (e.meta.name.clone(), v)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Typed

/// Element types a typed group can hold.
pub trait Element: Copy + PartialEq + std::fmt::Debug {
    fn from_variate(v: &Variate) -> Option<Vec<Self>>;
    fn slot_value(values: &[Self], vector: bool) -> SlotValue<'_>;
    fn to_variate(values: &[Self], vector: bool) -> Variate;
}

impl Element for f64 {
    fn from_variate(v: &Variate) -> Option<Vec<f64>> {
        match v {
            Variate::Real(x) => Some(vec![*x]),
            Variate::Vector(xs) => Some(xs.clone()),
            Variate::Int(_) => None,
        }
    }

    fn slot_value(values: &[f64], vector: bool) -> SlotValue<'_> {
        if vector {
            SlotValue::Vector(values)
        } else {
            SlotValue::Real(values[0])
        }
    }

    fn to_variate(values: &[f64], vector: bool) -> Variate {
        if vector {
            Variate::Vector(values.to_vec())
        } else {
            Variate::Real(values[0])
        }
    }
}

impl Element for i64 {
    fn from_variate(v: &Variate) -> Option<Vec<i64>> {
        match v {
            Variate::Int(k) => Some(vec![*k]),
            _ => None,
        }
    }

    fn slot_value(values: &[i64], _vector: bool) -> SlotValue<'_> {
        SlotValue::Int(values[0])
    }

    fn to_variate(values: &[i64], _vector: bool) -> Variate {
        Variate::Int(values[0])
    }
}

/// All variables sharing one symbol, stored in one concretely-typed buffer.
#[derive(Debug, Clone)]
pub struct Group<T> {
    symbol: String,
    names: Vec<VarName>,
    dists: Vec<Distribution>,
    values: Vec<T>,
    ranges: Vec<Range<usize>>,
    vector_valued: Vec<bool>,
    linked: Vec<bool>,
    order: Vec<usize>,
    index: HashMap<VarName, usize>,
    /// Flattened-vector offset per name.
    flat: Vec<usize>,
    /// Names are exactly `sym[1], sym[2], ...`, each one scalar.
    dense: bool,
}

impl<T: Element> Group<T> {
    fn new(symbol: &str) -> Self {
        Self {
            symbol: symbol.to_string(),
            names: Vec::new(),
            dists: Vec::new(),
            values: Vec::new(),
            ranges: Vec::new(),
            vector_valued: Vec::new(),
            linked: Vec::new(),
            order: Vec::new(),
            index: HashMap::new(),
            flat: Vec::new(),
            dense: true,
        }
    }

    fn push(&mut self, meta: EntryMeta, values: Vec<T>, vector: bool) {
        let start = self.values.len();
        self.values.extend_from_slice(&values);
        self.ranges.push(start..self.values.len());
        self.index.insert(meta.name.clone(), self.names.len());
        let k = self.names.len() + 1;
        self.dense &= !vector
            && values.len() == 1
            && meta.name.path().len() == 1
            && meta.name.path().groups()[0] == [crate::addressing::IndexAtom::Int(k)];
        self.names.push(meta.name);
        self.dists.push(meta.dist);
        self.vector_valued.push(vector);
        self.linked.push(meta.linked);
        self.order.push(meta.order);
        self.flat.push(0);
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn names(&self) -> &[VarName] {
        &self.names
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn orders(&self) -> &[usize] {
        &self.order
    }

    pub fn linked(&self) -> &[bool] {
        &self.linked
    }

    pub fn dists(&self) -> &[Distribution] {
        &self.dists
    }

    fn get(&self, i: usize) -> &[T] {
        &self.values[self.ranges[i].clone()]
    }

    fn rebuild(&mut self, mut f: impl FnMut(usize, &[T]) -> Result<Vec<T>, TraceError>) -> Result<(), TraceError> {
        let mut values = Vec::with_capacity(self.values.len());
        let mut ranges = Vec::with_capacity(self.ranges.len());
        for i in 0..self.names.len() {
            let new = f(i, self.get(i))?;
            let start = values.len();
            values.extend(new);
            ranges.push(start..values.len());
        }
        self.values = values;
        self.ranges = ranges;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GroupRef {
    Real(usize),
    Int(usize),
}

/// Per-symbol, concretely-typed trace.
#[derive(Debug, Clone, Default)]
pub struct TypedTrace {
    real: Vec<Group<f64>>,
    int: Vec<Group<i64>>,
    symbols: HashMap<String, GroupRef>,
    /// `(group, name index)` sorted by global order.
    layout: Vec<(GroupRef, usize)>,
    flat_len: usize,
    logp: LogpAccumulator,
}

/// Converts a fully-visited untyped trace into per-symbol typed storage.
pub fn specialize(t: &UntypedTrace) -> Result<TypedTrace, TraceError> {
    let mut typed = TypedTrace {
        logp: t.logp,
        ..TypedTrace::default()
    };
    for e in &t.entries {
        typed.append(e.meta.clone(), &e.value, false)?;
    }
    typed.relayout();
    Ok(typed)
}

impl TypedTrace {
    pub fn real_groups(&self) -> &[Group<f64>] {
        &self.real
    }

    pub fn int_groups(&self) -> &[Group<i64>] {
        &self.int
    }

    /// Appends an entry; `growth` distinguishes a later dynamic insertion
    /// (unknown symbols are an error) from specialization.
    fn append(&mut self, meta: EntryMeta, value: &Variate, growth: bool) -> Result<(), TraceError> {
        let symbol = meta.name.symbol().to_string();
        let vector = matches!(value, Variate::Vector(_));
        let is_int = matches!(value, Variate::Int(_));
        let existing = self.symbols.get(&symbol).copied();
        let target = match (existing, is_int) {
            (Some(g @ GroupRef::Real(_)), false) | (Some(g @ GroupRef::Int(_)), true) => g,
            (Some(_), _) => return Err(TraceError::Specialization(symbol)),
            (None, _) if growth => return Err(TraceError::UnknownSymbol(symbol)),
            (None, false) => {
                self.real.push(Group::new(&symbol));
                let g = GroupRef::Real(self.real.len() - 1);
                self.symbols.insert(symbol, g);
                g
            }
            (None, true) => {
                self.int.push(Group::new(&symbol));
                let g = GroupRef::Int(self.int.len() - 1);
                self.symbols.insert(symbol, g);
                g
            }
        };
        match target {
            GroupRef::Real(g) => {
                let vals = f64::from_variate(value).expect("real variate");
                self.real[g].push(meta, vals, vector);
            }
            GroupRef::Int(g) => {
                let vals = i64::from_variate(value).expect("int variate");
                self.int[g].push(meta, vals, vector);
            }
        }
        Ok(())
    }

    fn relayout(&mut self) {
        let mut layout: Vec<(usize, GroupRef, usize)> = Vec::new();
        for (g, group) in self.real.iter().enumerate() {
            layout.extend(group.order.iter().enumerate().map(|(i, &o)| (o, GroupRef::Real(g), i)));
        }
        for (g, group) in self.int.iter().enumerate() {
            layout.extend(group.order.iter().enumerate().map(|(i, &o)| (o, GroupRef::Int(g), i)));
        }
        layout.sort_by_key(|&(o, _, _)| o);
        let mut offset = 0;
        for &(_, g, i) in &layout {
            let len = match g {
                GroupRef::Real(g) => {
                    self.real[g].flat[i] = offset;
                    self.real[g].ranges[i].len()
                }
                GroupRef::Int(g) => {
                    self.int[g].flat[i] = offset;
                    1
                }
            };
            offset += len;
        }
        self.flat_len = offset;
        self.layout = layout.into_iter().map(|(_, g, i)| (g, i)).collect();
    }

    fn locate(&self, vn: &VarName) -> Option<(GroupRef, usize)> {
        let g = *self.symbols.get(vn.symbol())?;
        let i = match g {
            GroupRef::Real(k) => *self.real[k].index.get(vn)?,
            GroupRef::Int(k) => *self.int[k].index.get(vn)?,
        };
        Some((g, i))
    }

    fn meta(&self, g: GroupRef, i: usize) -> EntryMeta {
        match g {
            GroupRef::Real(k) => {
                let gr = &self.real[k];
                EntryMeta {
                    name: gr.names[i].clone(),
                    dist: gr.dists[i].clone(),
                    linked: gr.linked[i],
                    order: gr.order[i],
                }
            }
            GroupRef::Int(k) => {
                let gr = &self.int[k];
                EntryMeta {
                    name: gr.names[i].clone(),
                    dist: gr.dists[i].clone(),
                    linked: gr.linked[i],
                    order: gr.order[i],
                }
            }
        }
    }

    /// Metadata for every entry in global order.
    pub fn metas(&self) -> Vec<EntryMeta> {
        self.layout.iter().map(|&(g, i)| self.meta(g, i)).collect()
    }

    pub fn set_value(&mut self, vn: &VarName, value: Variate) -> Result<(), TraceError> {
        let (g, i) = self.locate(vn).ok_or_else(|| TraceError::NotFound(vn.clone()))?;
        match (g, &value) {
            (GroupRef::Real(k), Variate::Real(x)) if !self.real[k].vector_valued[i] => {
                let r = self.real[k].ranges[i].start;
                self.real[k].values[r] = *x;
            }
            (GroupRef::Real(k), Variate::Vector(xs))
                if self.real[k].vector_valued[i] && self.real[k].ranges[i].len() == xs.len() =>
            {
                let r = self.real[k].ranges[i].clone();
                self.real[k].values[r].copy_from_slice(xs);
            }
            (GroupRef::Int(k), Variate::Int(x)) => {
                let r = self.int[k].ranges[i].start;
                self.int[k].values[r] = *x;
            }
            _ => {
                return Err(shape_err(
                    vn,
                    format!("{value:?} does not match the stored element type or length"),
                ))
            }
        }
        Ok(())
    }

    pub fn is_linked(&self, vn: &VarName) -> Result<bool, TraceError> {
        let (g, i) = self.locate(vn).ok_or_else(|| TraceError::NotFound(vn.clone()))?;
        Ok(match g {
            GroupRef::Real(k) => self.real[k].linked[i],
            GroupRef::Int(k) => self.int[k].linked[i],
        })
    }

    fn group_of(&self, symbol: &str) -> Result<GroupRef, TraceError> {
        self.symbols
            .get(symbol)
            .copied()
            .ok_or_else(|| TraceError::UnknownSymbol(symbol.to_string()))
    }

    fn transform(&mut self, targets: &[&str], to_linked: bool) -> Result<(), TraceError> {
        let mut groups = Vec::with_capacity(targets.len());
        for s in targets {
            match self.group_of(s)? {
                GroupRef::Real(k) => groups.push(k),
                GroupRef::Int(k) => return Err(TraceError::NotDifferentiable(self.int[k].names[0].clone())),
            }
        }
        // validate everything before mutating anything
        for &k in &groups {
            let g = &self.real[k];
            for (i, name) in g.names.iter().enumerate() {
                if g.linked[i] == to_linked {
                    let message = if to_linked { "already linked" } else { "not linked" };
                    return Err(TraceError::State {
                        name: name.clone(),
                        message: message.into(),
                    });
                }
                g.dists[i].bijector()?;
            }
        }
        for k in groups {
            let g = &mut self.real[k];
            let bijectors: Vec<Bijector> = g
                .dists
                .iter()
                .map(|d| d.bijector())
                .collect::<Result<_, _>>()?;
            g.rebuild(|i, x| {
                let b = bijectors[i];
                if to_linked {
                    b.forward(x).map_err(TraceError::from)
                } else {
                    Ok(b.inverse(x))
                }
            })?;
            g.linked.iter_mut().for_each(|l| *l = to_linked);
        }
        self.relayout();
        Ok(())
    }

    /// Maps the named symbols' values to unconstrained space.
    pub fn link(&mut self, targets: &[&str]) -> Result<(), TraceError> {
        self.transform(targets, true)
    }

    pub fn invlink(&mut self, targets: &[&str]) -> Result<(), TraceError> {
        self.transform(targets, false)
    }

    /// Symbols in first-appearance order.
    pub fn symbols(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for &(g, _) in &self.layout {
            let s = match g {
                GroupRef::Real(k) => &self.real[k].symbol,
                GroupRef::Int(k) => &self.int[k].symbol,
            };
            if !seen.contains(s) {
                seen.push(s.clone());
            }
        }
        seen
    }

    /// Links every symbol not already linked. Fails on discrete symbols.
    pub fn link_all(&mut self) -> Result<(), TraceError> {
        let unlinked: Vec<String> = self
            .symbols()
            .into_iter()
            .filter(|s| match self.symbols[s] {
                GroupRef::Real(k) => self.real[k].linked.iter().any(|l| !l),
                GroupRef::Int(_) => true,
            })
            .collect();
        let refs: Vec<&str> = unlinked.iter().map(String::as_str).collect();
        self.link(&refs)
    }

    pub fn has_discrete(&self) -> bool {
        self.int.iter().any(|g| !g.names.is_empty())
    }

    pub fn first_discrete(&self) -> Option<&VarName> {
        self.int.iter().find_map(|g| g.names.first())
    }

    /// Length of the flattened parameter vector.
    pub fn flat_len(&self) -> usize {
        self.flat_len
    }

    /// Concatenates stored values in global order. Discrete variables are
    /// not allowed.
    pub fn flatten(&self) -> Result<Vec<f64>, TraceError> {
        if let Some(name) = self.first_discrete() {
            return Err(TraceError::NotDifferentiable(name.clone()));
        }
        let mut theta = Vec::with_capacity(self.flat_len);
        for &(g, i) in &self.layout {
            if let GroupRef::Real(k) = g {
                theta.extend_from_slice(self.real[k].get(i));
            }
        }
        Ok(theta)
    }

    pub fn unflatten(&mut self, theta: &[f64]) -> Result<(), TraceError> {
        if let Some(name) = self.first_discrete() {
            return Err(TraceError::NotDifferentiable(name.clone()));
        }
        self.set_state(theta)
    }

    /// Flattened values including discrete ones (as exact floats), with a
    /// mask marking the discrete positions.
    pub fn state(&self) -> (Vec<f64>, Vec<bool>) {
        let mut theta = Vec::with_capacity(self.flat_len);
        let mut discrete = Vec::with_capacity(self.flat_len);
        for &(g, i) in &self.layout {
            match g {
                GroupRef::Real(k) => {
                    let v = self.real[k].get(i);
                    theta.extend_from_slice(v);
                    discrete.extend(std::iter::repeat_n(false, v.len()));
                }
                GroupRef::Int(k) => {
                    theta.push(self.int[k].get(i)[0] as f64);
                    discrete.push(true);
                }
            }
        }
        (theta, discrete)
    }

    pub fn set_state(&mut self, theta: &[f64]) -> Result<(), TraceError> {
        if theta.len() != self.flat_len {
            return Err(TraceError::Length {
                expected: self.flat_len,
                actual: theta.len(),
            });
        }
        for &(g, i) in &self.layout {
            match g {
                GroupRef::Real(k) => {
                    let grp = &mut self.real[k];
                    let r = grp.ranges[i].clone();
                    let f = grp.flat[i];
                    grp.values[r.clone()].copy_from_slice(&theta[f..f + r.len()]);
                }
                GroupRef::Int(k) => {
                    let grp = &mut self.int[k];
                    let r = grp.ranges[i].start;
                    grp.values[r] = theta[grp.flat[i]] as i64;
                }
            }
        }
        Ok(())
    }
}

impl VarInfo for TypedTrace {
    fn kind(&self) -> TraceKind {
        TraceKind::Typed
    }

    fn logp(&self) -> f64 {
        self.logp.get()
    }

    fn acc_logp(&mut self, delta: f64) -> Result<(), TraceError> {
        self.logp.acc(delta)
    }

    fn reset_logp(&mut self) {
        self.logp.reset()
    }

    fn reject(&mut self) {
        self.logp.reject()
    }

    fn contains(&self, vn: &VarName) -> bool {
        self.locate(vn).is_some()
    }

    fn revisit(&mut self, vn: &VarName, dist: Distribution) -> Result<Option<Slot<'_>>, TraceError> {
        let Some((g, i)) = self.locate(vn) else {
            return Ok(None);
        };
        Ok(Some(match g {
            GroupRef::Real(k) => {
                let grp = &mut self.real[k];
                let linked = grp.linked[i];
                update_dist(&mut grp.dists[i], vn, dist, linked)?;
                let bijector = if linked { Some(grp.dists[i].bijector()?) } else { None };
                let grp = &self.real[k];
                Slot {
                    value: f64::slot_value(grp.get(i), grp.vector_valued[i]),
                    linked,
                    bijector,
                }
            }
            GroupRef::Int(k) => {
                let grp = &mut self.int[k];
                update_dist(&mut grp.dists[i], vn, dist, false)?;
                Slot {
                    value: SlotValue::Int(grp.values[grp.ranges[i].start]),
                    linked: false,
                    bijector: None,
                }
            }
        }))
    }

    fn insert(&mut self, vn: VarName, dist: Distribution, value: Variate) -> Result<(), TraceError> {
        if self.contains(&vn) {
            return Err(TraceError::Duplicate(vn));
        }
        check_variate(&vn, &dist, &value)?;
        let order = self.layout.len();
        self.append(
            EntryMeta {
                name: vn,
                dist,
                linked: false,
                order,
            },
            &value,
            true,
        )?;
        self.relayout();
        Ok(())
    }

    fn dense(&mut self, symbol: &str, n: usize) -> Option<DenseSlot<'_>> {
        let GroupRef::Real(k) = *self.symbols.get(symbol)? else {
            return None;
        };
        let g = &mut self.real[k];
        if !g.dense || g.names.len() != n {
            return None;
        }
        let contiguous = g.flat.windows(2).all(|w| w[1] == w[0] + 1);
        Some(DenseSlot {
            values: &g.values,
            linked: &g.linked,
            dists: &mut g.dists,
            flat_start: if contiguous { g.flat.first().copied() } else { None },
        })
    }

    fn flat_range(&self, vn: &VarName) -> Option<Range<usize>> {
        match self.locate(vn)? {
            (GroupRef::Real(k), i) => {
                let g = &self.real[k];
                Some(g.flat[i]..g.flat[i] + g.ranges[i].len())
            }
            (GroupRef::Int(k), i) => Some(self.int[k].flat[i]..self.int[k].flat[i] + 1),
        }
    }

    fn num_entries(&self) -> usize {
        self.layout.len()
    }

    fn get_value(&self, vn: &VarName) -> Result<Variate, TraceError> {
        match self.locate(vn).ok_or_else(|| TraceError::NotFound(vn.clone()))? {
            (GroupRef::Real(k), i) => Ok(f64::to_variate(self.real[k].get(i), self.real[k].vector_valued[i])),
            (GroupRef::Int(k), i) => Ok(i64::to_variate(self.int[k].get(i), false)),
        }
    }

    fn snapshot(&self) -> Vec<(VarName, Variate)> {
        self.layout
            .iter()
            .map(|&(g, i)| {
                let meta = self.meta(g, i);
                let raw = match g {
                    GroupRef::Real(k) => f64::to_variate(self.real[k].get(i), self.real[k].vector_valued[i]),
                    GroupRef::Int(k) => i64::to_variate(self.int[k].get(i), false),
                };
                let v = constrained(&raw, meta.linked, &meta.dist)
                    .expect("linked entries always have a bijector");
                (meta.name, v)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vn(s: &str) -> VarName {
        VarName::parse(s).unwrap()
    }

    fn normal() -> Distribution {
        Distribution::normal(0.0, 1.0).unwrap()
    }

    fn gamma() -> Distribution {
        Distribution::gamma(1.0, 1.0).unwrap()
    }

    fn sample_trace() -> UntypedTrace {
        let mut t = UntypedTrace::new();
        t.insert(vn("w[1]"), normal(), Variate::Real(1.0)).unwrap();
        t.insert(vn("w[2]"), normal(), Variate::Real(2.0)).unwrap();
        t.insert(vn("s"), gamma(), Variate::Real(0.5)).unwrap();
        t.acc_logp(-3.25).unwrap();
        t
    }

    #[test]
    fn specialize_groups_by_symbol() {
        let u = sample_trace();
        let t = specialize(&u).unwrap();
        assert_eq!(t.real_groups().len(), 2);
        assert_eq!(t.real_groups()[0].names().len(), 2);
        assert_eq!(t.real_groups()[0].values(), &[1.0, 2.0]);
        assert_eq!(t.logp(), -3.25);
        for (name, _) in u.snapshot() {
            assert_eq!(t.get_value(&name).unwrap(), u.get_value(&name).unwrap());
        }
    }

    #[test]
    fn specialize_empty() {
        let mut u = UntypedTrace::new();
        u.acc_logp(1.5).unwrap();
        let t = specialize(&u).unwrap();
        assert_eq!(t.num_entries(), 0);
        assert_eq!(t.logp(), 1.5);
        assert_eq!(t.flatten().unwrap(), Vec::<f64>::new());
    }

    #[test]
    fn specialize_rejects_mixed_element_types() {
        let mut u = UntypedTrace::new();
        u.insert(vn("z"), Distribution::poisson(1.0).unwrap(), Variate::Int(3)).unwrap();
        u.insert(vn("z[2]"), normal(), Variate::Real(0.1)).unwrap();
        assert_eq!(specialize(&u).unwrap_err(), TraceError::Specialization("z".into()));
    }

    #[test]
    fn get_and_set() {
        let mut t = specialize(&sample_trace()).unwrap();
        t.set_value(&vn("s"), Variate::Real(2.0)).unwrap();
        assert_eq!(t.get_value(&vn("s")).unwrap(), Variate::Real(2.0));
        assert!(matches!(t.get_value(&vn("nope")), Err(TraceError::NotFound(_))));
        assert!(t.set_value(&vn("w[1]"), Variate::Vector(vec![1.0, 2.0, 3.0])).is_err());
        assert!(t.set_value(&vn("w[1]"), Variate::Int(1)).is_err());

        let mut u = UntypedTrace::new();
        u.insert(vn("w"), Distribution::mv_normal_iso(vec![0.0; 2], 1.0).unwrap(), Variate::Vector(vec![1.0, 2.0]))
            .unwrap();
        assert!(u.set_value(&vn("w"), Variate::Vector(vec![1.0])).is_err());
        let mut t = specialize(&u).unwrap();
        assert!(t.set_value(&vn("w"), Variate::Vector(vec![1.0])).is_err());
        t.set_value(&vn("w"), Variate::Vector(vec![3.0, 4.0])).unwrap();
        assert_eq!(t.get_value(&vn("w")).unwrap(), Variate::Vector(vec![3.0, 4.0]));
    }

    #[test]
    fn link_round_trip() {
        let mut u = UntypedTrace::new();
        u.insert(vn("s"), gamma(), Variate::Real(2.0)).unwrap();
        u.insert(vn("p"), Distribution::dirichlet(vec![1.0; 3]).unwrap(), Variate::Vector(vec![0.2, 0.3, 0.5]))
            .unwrap();
        u.insert(vn("b"), Distribution::beta(2.0, 2.0).unwrap(), Variate::Real(0.25)).unwrap();
        let mut t = specialize(&u).unwrap();
        t.link(&["s", "p", "b"]).unwrap();
        assert!((t.get_value(&vn("s")).unwrap().as_real().unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(t.is_linked(&vn("s")).unwrap());
        assert_eq!(t.flat_len(), 1 + 2 + 1);
        assert!(matches!(t.link(&["s"]), Err(TraceError::State { .. })));
        t.invlink(&["s", "p", "b"]).unwrap();
        for (name, v) in u.snapshot() {
            let back = t.get_value(&name).unwrap();
            match (v, back) {
                (Variate::Real(a), Variate::Real(b)) => assert!((a - b).abs() < 1e-12),
                (Variate::Vector(a), Variate::Vector(b)) => {
                    for (x, y) in a.iter().zip(&b) {
                        assert!((x - y).abs() < 1e-12);
                    }
                }
                other => panic!("{other:?}"),
            }
        }
        assert!(matches!(t.invlink(&["s"]), Err(TraceError::State { .. })));
    }

    #[test]
    fn link_discrete_fails() {
        let mut u = UntypedTrace::new();
        u.insert(vn("k"), Distribution::bernoulli(0.3).unwrap(), Variate::Int(1)).unwrap();
        let mut t = specialize(&u).unwrap();
        assert!(matches!(t.link(&["k"]), Err(TraceError::NotDifferentiable(_))));
        assert!(matches!(t.flatten(), Err(TraceError::NotDifferentiable(_))));
        assert_eq!(t.state(), (vec![1.0], vec![true]));
    }

    #[test]
    fn flatten_follows_order() {
        let mut u = UntypedTrace::new();
        u.insert(vn("w"), Distribution::mv_normal_iso(vec![0.0; 2], 1.0).unwrap(), Variate::Vector(vec![1.0, 2.0]))
            .unwrap();
        u.insert(vn("s"), gamma(), Variate::Real(0.5)).unwrap();
        let mut t = specialize(&u).unwrap();
        assert_eq!(t.flatten().unwrap(), vec![1.0, 2.0, 0.5]);
        assert!(matches!(t.unflatten(&[1.0, 2.0]), Err(TraceError::Length { expected: 3, actual: 2 })));
        t.unflatten(&[-1.0, 0.0, 3.0]).unwrap();
        assert_eq!(t.flatten().unwrap(), vec![-1.0, 0.0, 3.0]);
    }

    #[test]
    fn interleaved_orders_flatten_globally() {
        let mut u = UntypedTrace::new();
        u.insert(vn("a[1]"), normal(), Variate::Real(1.0)).unwrap();
        u.insert(vn("b"), normal(), Variate::Real(2.0)).unwrap();
        u.insert(vn("a[2]"), normal(), Variate::Real(3.0)).unwrap();
        let mut t = specialize(&u).unwrap();
        assert_eq!(t.flatten().unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(t.flat_range(&vn("a[2]")), Some(2..3));
        let d = t.dense("a", 2).unwrap();
        assert_eq!(d.flat_start, None);
    }

    #[test]
    fn typed_growth() {
        let mut t = specialize(&sample_trace()).unwrap();
        t.insert(vn("w[3]"), normal(), Variate::Real(7.0)).unwrap();
        assert_eq!(t.real_groups()[0].values(), &[1.0, 2.0, 7.0]);
        assert_eq!(t.flatten().unwrap(), vec![1.0, 2.0, 0.5, 7.0]);
        assert!(matches!(
            t.insert(vn("q"), normal(), Variate::Real(0.0)),
            Err(TraceError::UnknownSymbol(_))
        ));
        assert!(matches!(
            t.insert(vn("w[4]"), Distribution::poisson(1.0).unwrap(), Variate::Int(1)),
            Err(TraceError::Specialization(_))
        ));
    }

    #[test]
    fn accumulator_semantics() {
        let mut t = UntypedTrace::new();
        t.reset_logp();
        t.acc_logp(1.5).unwrap();
        t.acc_logp(-0.5).unwrap();
        assert_eq!(t.logp(), 1.0);
        t.acc_logp(f64::NEG_INFINITY).unwrap();
        t.acc_logp(3.0).unwrap();
        assert_eq!(t.logp(), f64::NEG_INFINITY);
        t.acc_logp(f64::INFINITY).unwrap();
        assert_eq!(t.logp(), f64::NEG_INFINITY);
        assert_eq!(t.acc_logp(f64::NAN), Err(TraceError::NanLogp));
    }

    #[test]
    fn insert_checks_support_type() {
        let mut t = UntypedTrace::new();
        assert!(t.insert(vn("x"), normal(), Variate::Int(1)).is_err());
        t.insert(vn("x"), normal(), Variate::Real(1.0)).unwrap();
        assert!(matches!(t.insert(vn("x"), normal(), Variate::Real(1.0)), Err(TraceError::Duplicate(_))));
    }

    proptest! {
        #[test]
        fn specialization_preserves_values(
            values in prop::collection::vec(-10.0f64..10.0, 1..20),
            ints in prop::collection::vec(0i64..5, 0..5),
        ) {
            let mut u = UntypedTrace::new();
            for (i, v) in values.iter().enumerate() {
                u.insert(VarName::indexed("w", i + 1), normal(), Variate::Real(*v)).unwrap();
                if let Some(k) = ints.get(i) {
                    u.insert(VarName::indexed("k", i + 1), Distribution::poisson(2.0).unwrap(), Variate::Int(*k)).unwrap();
                }
            }
            let t = specialize(&u).unwrap();
            for (name, v) in u.snapshot() {
                prop_assert_eq!(t.get_value(&name).unwrap(), v);
            }
            let (state, mask) = t.state();
            prop_assert_eq!(state.len(), values.len() + ints.len().min(values.len()));
            prop_assert_eq!(mask.iter().filter(|m| **m).count(), ints.len().min(values.len()));
            let mut orders: Vec<usize> = t.metas().iter().map(|m| m.order).collect();
            orders.sort();
            prop_assert_eq!(orders, (0..t.num_entries()).collect::<Vec<_>>());
        }

        #[test]
        fn unflatten_flatten_round_trips(theta in prop::collection::vec(-5.0f64..5.0, 3)) {
            let mut t = specialize(&sample_trace()).unwrap();
            t.unflatten(&theta).unwrap();
            prop_assert_eq!(t.flatten().unwrap(), theta);
        }
    }
}
