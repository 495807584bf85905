//! Command templates and the three execution variables.
//!
//! `$inputDataset` and `$outputDir` are always bound; `$inputRun` only for
//! components with predecessors. `${name}` is accepted as well, and `$$`
//! produces a literal dollar sign.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variable {
    InputDataset,
    InputRun,
    OutputDir,
}

impl Variable {
    pub const ALL: [Variable; 3] = [Variable::InputDataset, Variable::InputRun, Variable::OutputDir];

    pub fn name(self) -> &'static str {
        match self {
            Variable::InputDataset => "inputDataset",
            Variable::InputRun => "inputRun",
            Variable::OutputDir => "outputDir",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}", self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Var(Variable),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommandTemplate {
    segments: Vec<Segment>,
}

impl CommandTemplate {
    pub fn parse(text: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut chars = text.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            if c != '$' {
                literal.push(c);
                continue;
            }
            let name = match chars.peek().map(|&(_, c)| c) {
                Some('$') => {
                    chars.next();
                    literal.push('$');
                    continue;
                }
                Some('{') => {
                    chars.next();
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some((_, '}')) => break,
                            Some((_, c)) => name.push(c),
                            None => return Err(Error::Template(format!("unterminated `${{` at offset {i}"))),
                        }
                    }
                    name
                }
                Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                    let mut name = String::new();
                    while let Some(&(_, c)) = chars.peek() {
                        if c.is_ascii_alphanumeric() || c == '_' {
                            name.push(c);
                            chars.next();
                        } else {
                            break;
                        }
                    }
                    name
                }
                _ => return Err(Error::Template(format!("dangling `$` at offset {i} (use `$$` for a literal)"))),
            };
            let var = Variable::from_name(&name)
                .ok_or_else(|| Error::Template(format!("unknown variable `${name}`")))?;
            if !literal.is_empty() {
                segments.push(Segment::Literal(std::mem::take(&mut literal)));
            }
            segments.push(Segment::Var(var));
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(CommandTemplate { segments })
    }

    pub fn uses(&self, var: Variable) -> bool {
        self.segments.contains(&Segment::Var(var))
    }

    /// Checks that `$inputRun` only appears when there is something to bind.
    pub fn check_predecessors(&self, predecessors: usize) -> Result<()> {
        if predecessors == 0 && self.uses(Variable::InputRun) {
            return Err(Error::Template(
                "`$inputRun` is only available to components with predecessors".into(),
            ));
        }
        Ok(())
    }

    fn render(&self, bindings: &BTreeMap<Variable, String>) -> Result<String> {
        let mut out = String::new();
        for s in &self.segments {
            match s {
                Segment::Literal(l) => out.push_str(l),
                Segment::Var(v) => out.push_str(
                    bindings
                        .get(v)
                        .ok_or_else(|| Error::Template(format!("{v} is not bound")))?,
                ),
            }
        }
        Ok(out)
    }
}

/// Container-side locations for one component invocation.
#[derive(Clone, Debug)]
pub struct CommandContext<'a> {
    pub input_dataset: &'a str,
    pub output_dir: &'a str,
    /// Where predecessor outputs are mounted; ignored without predecessors.
    pub input_run_root: &'a str,
    pub predecessors: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedCommand {
    pub command: String,
    /// The variables, also exported to the container environment.
    pub env: BTreeMap<String, String>,
    /// Mount point of each predecessor output, in definition order. A single
    /// predecessor is mounted at `$inputRun` itself, several at `$inputRun/1`,
    /// `$inputRun/2`, ...
    pub run_dirs: Vec<String>,
}

pub fn resolve_command(template: &str, ctx: &CommandContext<'_>) -> Result<ResolvedCommand> {
    let parsed = CommandTemplate::parse(template)?;
    parsed.check_predecessors(ctx.predecessors)?;
    let mut bindings = BTreeMap::new();
    bindings.insert(Variable::InputDataset, ctx.input_dataset.to_string());
    bindings.insert(Variable::OutputDir, ctx.output_dir.to_string());
    let run_dirs = match ctx.predecessors {
        0 => Vec::new(),
        1 => vec![ctx.input_run_root.to_string()],
        n => (1..=n)
            .map(|i| format!("{}/{i}", ctx.input_run_root.trim_end_matches('/')))
            .collect(),
    };
    if ctx.predecessors > 0 {
        bindings.insert(Variable::InputRun, ctx.input_run_root.to_string());
    }
    let command = parsed.render(&bindings)?;
    let env = bindings.into_iter().map(|(k, v)| (k.name().to_string(), v)).collect();
    Ok(ResolvedCommand { command, env, run_dirs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(predecessors: usize) -> CommandContext<'static> {
        CommandContext {
            input_dataset: "/mnt/input",
            output_dir: "/mnt/output",
            input_run_root: "/mnt/inputRun",
            predecessors,
        }
    }

    #[test]
    fn substitutes_dataset_and_output() {
        let r = resolve_command("run.sh --in $inputDataset --out $outputDir", &ctx(0)).unwrap();
        assert_eq!(r.command, "run.sh --in /mnt/input --out /mnt/output");
        assert_eq!(r.env["inputDataset"], "/mnt/input");
        assert_eq!(r.env["outputDir"], "/mnt/output");
        assert!(!r.env.contains_key("inputRun"));
        assert!(r.run_dirs.is_empty());
    }

    #[test]
    fn input_run_layout() {
        let one = resolve_command("x ${inputRun}/index", &ctx(1)).unwrap();
        assert_eq!(one.command, "x /mnt/inputRun/index");
        assert_eq!(one.run_dirs, vec!["/mnt/inputRun"]);
        let two = resolve_command("x $inputRun", &ctx(2)).unwrap();
        assert_eq!(two.run_dirs, vec!["/mnt/inputRun/1", "/mnt/inputRun/2"]);
        assert_eq!(two.env["inputRun"], "/mnt/inputRun");
    }

    #[test]
    fn errors() {
        assert!(matches!(resolve_command("x $bogus", &ctx(0)), Err(Error::Template(m)) if m.contains("$bogus")));
        assert!(resolve_command("x $inputRun", &ctx(0)).is_err());
        assert!(resolve_command("x ${inputRun", &ctx(1)).is_err());
        assert!(resolve_command("x $ y", &ctx(0)).is_err());
    }

    #[test]
    fn dollar_escape() {
        assert_eq!(resolve_command("echo $$HOME", &ctx(0)).unwrap().command, "echo $HOME");
    }
}
