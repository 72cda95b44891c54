//! Run-time addresses of random variables.
//!
//! A [`VarName`] is a symbol plus an optional index path. The path is a list
//! of index *groups*, each written as one bracket pair: `x[1,2][3]` has two
//! groups, `[1,2]` and `[3]`. Indices are 1-based.

use std::fmt;

use thiserror::Error;

/// A single index position inside a bracket group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IndexAtom {
    /// 1-based integer index.
    Int(usize),
    /// Wildcard (`:`), matching any atom during subsumption.
    All,
}

/// Ordered index groups. An empty path denotes the whole variable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexPath(Vec<Vec<IndexAtom>>);

impl IndexPath {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    /// Builds a path from groups, rejecting zero indices and empty groups.
    pub fn from_groups(groups: Vec<Vec<IndexAtom>>) -> Result<Self, VarNameError> {
        for g in &groups {
            if g.is_empty() {
                return Err(VarNameError::new(0, "empty index group"));
            }
            if g.contains(&IndexAtom::Int(0)) {
                return Err(VarNameError::new(0, "indices are 1-based"));
            }
        }
        Ok(Self(groups))
    }

    pub fn groups(&self) -> &[Vec<IndexAtom>] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    fn push(&mut self, group: Vec<IndexAtom>) {
        self.0.push(group);
    }
}

/// Run-time identity of a random variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarName {
    symbol: String,
    path: IndexPath,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid variable name at byte {position}: {message}")]
pub struct VarNameError {
    pub position: usize,
    pub message: String,
}

impl VarNameError {
    fn new(position: usize, message: impl Into<String>) -> Self {
        Self {
            position,
            message: message.into(),
        }
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl VarName {
    /// A bare symbol with no indexing.
    ///
    /// Panics if `symbol` is not a valid identifier; use [`VarName::parse`]
    /// for untrusted input.
    pub fn symbol_only(symbol: impl Into<String>) -> Self {
        let symbol = symbol.into();
        assert!(is_identifier(&symbol), "invalid identifier {symbol:?}");
        Self {
            symbol,
            path: IndexPath::new(),
        }
    }

    pub fn new(symbol: impl Into<String>, path: IndexPath) -> Result<Self, VarNameError> {
        let symbol = symbol.into();
        if !is_identifier(&symbol) {
            return Err(VarNameError::new(0, format!("bad identifier {symbol:?}")));
        }
        Ok(Self { symbol, path })
    }

    /// `symbol[i]` with a single 1-based integer index.
    pub fn indexed(symbol: impl Into<String>, i: usize) -> Self {
        let mut v = Self::symbol_only(symbol);
        assert!(i >= 1, "indices are 1-based");
        v.path.push(vec![IndexAtom::Int(i)]);
        v
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn path(&self) -> &IndexPath {
        &self.path
    }

    /// Appends one group of integer indices.
    pub fn child(&self, indices: &[usize]) -> Self {
        let mut v = self.clone();
        v.path
            .push(indices.iter().map(|&i| IndexAtom::Int(i)).collect());
        v
    }

    /// True when `self` names `other` or a container of it: equal symbols and
    /// `self.path` is a group-wise prefix of `other.path`.
    pub fn subsumes(&self, other: &VarName) -> bool {
        if self.symbol != other.symbol || self.path.len() > other.path.len() {
            return false;
        }
        self.path
            .groups()
            .iter()
            .zip(other.path.groups())
            .all(|(a, b)| group_subsumes(a, b))
    }

    pub fn parse(s: &str) -> Result<Self, VarNameError> {
        let bytes = s.as_bytes();
        let mut pos = 0;
        while pos < bytes.len() && (bytes[pos].is_ascii_alphanumeric() || bytes[pos] == b'_') {
            pos += 1;
        }
        let symbol = &s[..pos];
        if !is_identifier(symbol) {
            return Err(VarNameError::new(0, "expected identifier"));
        }
        let mut path = IndexPath::new();
        while pos < bytes.len() {
            if bytes[pos] != b'[' {
                return Err(VarNameError::new(pos, "expected '['"));
            }
            pos += 1;
            let mut group = Vec::new();
            loop {
                let start = pos;
                while pos < bytes.len() && bytes[pos] != b',' && bytes[pos] != b']' {
                    pos += 1;
                }
                if pos >= bytes.len() {
                    return Err(VarNameError::new(pos, "unbalanced brackets"));
                }
                let atom = &s[start..pos];
                group.push(parse_atom(atom, start)?);
                let sep = bytes[pos];
                pos += 1;
                if sep == b']' {
                    break;
                }
            }
            path.push(group);
        }
        Ok(Self {
            symbol: symbol.to_string(),
            path,
        })
    }
}

fn parse_atom(atom: &str, pos: usize) -> Result<IndexAtom, VarNameError> {
    if atom == ":" {
        return Ok(IndexAtom::All);
    }
    if atom.is_empty() || !atom.bytes().all(|b| b.is_ascii_digit()) {
        return Err(VarNameError::new(pos, format!("non-integer index {atom:?}")));
    }
    match atom.parse::<usize>() {
        Ok(0) => Err(VarNameError::new(pos, "indices are 1-based")),
        Ok(i) => Ok(IndexAtom::Int(i)),
        Err(_) => Err(VarNameError::new(pos, format!("index {atom:?} out of range"))),
    }
}

fn group_subsumes(a: &[IndexAtom], b: &[IndexAtom]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| *x == IndexAtom::All || x == y)
}

impl fmt::Display for IndexAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexAtom::Int(i) => write!(f, "{i}"),
            IndexAtom::All => f.write_str(":"),
        }
    }
}

impl fmt::Display for VarName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.symbol)?;
        for group in self.path.groups() {
            f.write_str("[")?;
            for (k, atom) in group.iter().enumerate() {
                if k > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{atom}")?;
            }
            f.write_str("]")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for VarName {
    type Err = VarNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VarName::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vn(s: &str) -> VarName {
        VarName::parse(s).unwrap()
    }

    #[test]
    fn canonical_strings() {
        assert_eq!(VarName::symbol_only("w").to_string(), "w");
        let x = VarName::symbol_only("x").child(&[1, 2]);
        assert_eq!(x.to_string(), "x[1,2]");
        let x = VarName::symbol_only("x").child(&[1]).child(&[3]);
        assert_eq!(x.to_string(), "x[1][3]");
    }

    #[test]
    fn parse_examples() {
        assert_eq!(vn("s"), VarName::symbol_only("s"));
        assert_eq!(vn("y[10]"), VarName::indexed("y", 10));
        assert_eq!(vn("z[:,2]").to_string(), "z[:,2]");
        let err = VarName::parse("y[0]").unwrap_err();
        assert_eq!(err.position, 2);
    }

    #[test]
    fn parse_errors_carry_positions() {
        for bad in ["", "1x", "x[", "x[1", "x[a]", "x]", "x[1]]", "x[]", "x[1,]", "x y"] {
            let err = VarName::parse(bad).unwrap_err();
            assert!(err.position <= bad.len(), "{bad}: {err}");
        }
    }

    #[test]
    fn subsumption_examples() {
        assert!(vn("w").subsumes(&vn("w[3]")));
        assert!(!vn("x[1]").subsumes(&vn("x[1,2]")));
        assert!(!vn("x[2]").subsumes(&vn("y[2]")));
        assert!(vn("x[:]").subsumes(&vn("x[4][1]")));
        assert!(!vn("x[1][2]").subsumes(&vn("x[1]")));
    }

    fn arb_varname() -> impl Strategy<Value = VarName> {
        let atom = prop_oneof![4 => (1usize..20).prop_map(IndexAtom::Int), 1 => Just(IndexAtom::All)];
        let group = prop::collection::vec(atom, 1..3);
        (
            prop::sample::select(vec!["w", "x", "_a1"]),
            prop::collection::vec(group, 0..3),
        )
            .prop_map(|(s, groups)| {
                VarName::new(s, IndexPath::from_groups(groups).unwrap()).unwrap()
            })
    }

    proptest! {
        #[test]
        fn string_form_round_trips(v in arb_varname()) {
            prop_assert_eq!(VarName::parse(&v.to_string()).unwrap(), v);
        }

        #[test]
        fn subsumption_is_a_partial_order(a in arb_varname(), b in arb_varname(), c in arb_varname()) {
            prop_assert!(a.subsumes(&a));
            if a.subsumes(&b) && b.subsumes(&c) {
                prop_assert!(a.subsumes(&c));
            }
            if a.subsumes(&b) && b.subsumes(&a) {
                prop_assert_eq!(a, b);
            }
        }
    }
}
