use std::io::{self, BufRead, Write};

use crate::{Failure, PasswordArgs};

const ARGV_WARNING: &str =
    "warning: a password given as an argument is visible in shell history and process listings; prefer --password-stdin";

/// Line-oriented reader over standard input for prompts.
pub struct Input {
    stdin: io::StdinLock<'static>,
}

impl Input {
    pub fn new() -> Self {
        Input { stdin: io::stdin().lock() }
    }

    /// Next line without its terminator; `None` at end of input.
    pub fn line(&mut self) -> Result<Option<String>, Failure> {
        let mut buf = String::new();
        let n = self.stdin.read_line(&mut buf).map_err(|e| Failure::config(format!("reading stdin: {e}")))?;
        if n == 0 {
            return Ok(None);
        }
        let trimmed = buf.strip_suffix('\n').unwrap_or(&buf);
        Ok(Some(trimmed.strip_suffix('\r').unwrap_or(trimmed).to_string()))
    }

    pub fn prompt(&mut self, text: &str) -> Result<Option<String>, Failure> {
        eprintln!("{text}");
        let _ = io::stderr().flush();
        self.line()
    }
}

/// Resolves the password from, in order: stdin, the flag, a positional
/// argument, or a terminal prompt.
pub fn password(args: &PasswordArgs, positional: Option<&str>, input: &mut Input) -> Result<String, Failure> {
    let pw = if args.password_stdin {
        input.line()?.ok_or_else(|| Failure::config("no password on standard input"))?
    } else if let Some(p) = args.password.as_deref().or(positional) {
        eprintln!("{ARGV_WARNING}");
        p.to_string()
    } else {
        rpassword::prompt_password("Enter port knocking password: ")
            .map_err(|_| Failure::config("cannot prompt for a password without a terminal; use --password-stdin"))?
    };
    if pw.is_empty() {
        return Err(Failure::config("password must not be empty"));
    }
    Ok(pw)
}

pub fn has_password(args: &PasswordArgs) -> bool {
    args.password_stdin || args.password.is_some()
}
