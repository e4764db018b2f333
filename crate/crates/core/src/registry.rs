//! Name-keyed tables of constructors, used to pick variants at runtime.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {kind} `{name}` (known: {known})")]
pub struct UnknownName {
    pub kind: &'static str,
    pub name: String,
    pub known: String,
}

#[derive(Clone)]
pub struct Registry<F> {
    kind: &'static str,
    entries: BTreeMap<String, F>,
}

impl<F> Registry<F> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any earlier entry.
    pub fn register(&mut self, name: &str, factory: F) -> &mut Self {
        self.entries.insert(name.to_string(), factory);
        self
    }

    pub fn get(&self, name: &str) -> Result<&F, UnknownName> {
        self.entries.get(name).ok_or_else(|| UnknownName {
            kind: self.kind,
            name: name.to_string(),
            known: self.names().join(", "),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Registered names in sorted order.
    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_error() {
        let mut r: Registry<fn() -> u32> = Registry::new("widget");
        r.register("b", || 2).register("a", || 1);
        assert_eq!((r.get("a").unwrap())(), 1);
        assert_eq!(r.names(), vec!["a", "b"]);
        let err = r.get("c").unwrap_err();
        assert_eq!(err.to_string(), "unknown widget `c` (known: a, b)");
    }
}
