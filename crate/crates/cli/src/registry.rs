//! The sub-command table. Every sub-command is a name, a clap argument
//! schema and a handler that receives the shared session and the parsed
//! arguments.

use std::collections::BTreeMap;

use clap::{ArgMatches, Command};

use crate::Context;

pub type Handler = fn(&mut Context, &ArgMatches) -> anyhow::Result<()>;

#[derive(Clone)]
pub struct OpSpec {
    pub name: String,
    pub about: String,
    pub args: fn(Command) -> Command,
    pub handler: Handler,
}

impl OpSpec {
    /// The clap command for this sub-command, named and described.
    pub fn command(&self) -> Command {
        let cmd = Command::new(self.name.clone())
            .about(self.about.clone())
            .no_binary_name(true)
            .disable_version_flag(true);
        (self.args)(cmd)
    }
}

#[derive(Debug, PartialEq, Eq)]
pub struct DuplicateOp(pub String);

impl std::fmt::Display for DuplicateOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "sub-command `{}` is registered twice", self.0)
    }
}

impl std::error::Error for DuplicateOp {}

#[derive(Clone, Default)]
pub struct Registry {
    ops: BTreeMap<String, OpSpec>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        about: &str,
        args: fn(Command) -> Command,
        handler: Handler,
    ) -> Result<(), DuplicateOp> {
        if self.ops.contains_key(name) {
            return Err(DuplicateOp(name.to_string()));
        }
        let spec = OpSpec {
            name: name.to_string(),
            about: about.to_string(),
            args,
            handler,
        };
        self.ops.insert(name.to_string(), spec);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&OpSpec> {
        self.ops.get(name)
    }

    /// Registered names, alphabetized.
    pub fn names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.ops.keys().map(String::as_str).collect();
        names.sort_by_key(|n| (n.to_ascii_lowercase(), n.to_string()));
        names
    }

    pub fn specs(&self) -> impl Iterator<Item = &OpSpec> {
        self.names().into_iter().map(move |n| &self.ops[n])
    }
}
