//! Name-keyed lookup of interchangeable strategy constructors.

use crate::error::{Error, Result};

/// A small ordered registry mapping names to factories.
///
/// Lookup is linear; registries here hold a handful of entries.
pub struct Registry<F> {
    kind: &'static str,
    entries: Vec<(&'static str, F)>,
}

impl<F> Registry<F> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Adds a factory. Panics if the name is already taken, since registries
    /// are assembled from static tables at startup.
    pub fn register(&mut self, name: &'static str, factory: F) -> &mut Self {
        assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "{} `{name}` registered twice",
            self.kind
        );
        self.entries.push((name, factory));
        self
    }

    pub fn get(&self, name: &str) -> Result<&F> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| f)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_unknown() {
        let mut reg: Registry<fn() -> u8> = Registry::new("widget");
        reg.register("one", || 1).register("two", || 2);
        assert_eq!((reg.get("two").unwrap())(), 2);
        let err = reg.get("three").err().unwrap();
        assert_eq!(err.to_string(), "unknown widget `three` (known: one, two)");
    }

    #[test]
    #[should_panic(expected = "registered twice")]
    fn duplicate_names_panic() {
        let mut reg: Registry<fn() -> u8> = Registry::new("widget");
        reg.register("one", || 1).register("one", || 1);
    }
}
