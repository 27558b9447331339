//! Name-keyed registries of interchangeable strategies.
//!
//! A [`Registry`] maps a name to a constructor producing a boxed trait
//! object. Optimizers and retrieval node scorers are selected this way from
//! config files and the command line.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown {kind} `{name}` (available: {available})")]
pub struct UnknownStrategy {
    pub kind: &'static str,
    pub name: String,
    pub available: String,
}

pub type Constructor<T, A> = fn(&A) -> Box<T>;

pub struct Registry<T: ?Sized, A = ()> {
    kind: &'static str,
    entries: Vec<(&'static str, Constructor<T, A>)>,
}

impl<T: ?Sized, A> Registry<T, A> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Registers `ctor` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &'static str, ctor: Constructor<T, A>) -> &mut Self {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, ctor));
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| *n == name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn create(&self, name: &str, args: &A) -> Result<Box<T>, UnknownStrategy> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, ctor)| ctor(args))
            .ok_or_else(|| UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }
}
