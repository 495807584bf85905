//! Backend driving a Docker-compatible runtime CLI (`docker`, `podman`).
//!
//! Every launch uses `--network none`, a read-only root filesystem, read-only
//! bind mounts for inputs and a single writable bind mount for the output.

use std::io::Read;
use std::os::unix::fs::MetadataExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use super::sandbox::{SandboxSpec, OUTPUT_MOUNT};
use super::{ContainerBackend, ContainerOutcome, ResourceLimits};
use crate::error::{Error, IoContext, Result};

#[derive(Debug)]
pub struct OciBackend {
    runtime: PathBuf,
    launches: AtomicUsize,
}

impl OciBackend {
    pub fn new(runtime: impl Into<PathBuf>) -> Self {
        OciBackend {
            runtime: runtime.into(),
            launches: AtomicUsize::new(0),
        }
    }

    /// Arguments of `<runtime> run ...` for `spec`.
    pub fn run_args(&self, spec: &SandboxSpec, limits: &ResourceLimits) -> Result<Vec<String>> {
        spec.validate()?;
        let mut args: Vec<String> = ["run", "--rm", "--network", "none", "--read-only", "--tmpfs", "/tmp"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        args.extend(["--name".into(), spec.name.clone()]);
        args.extend(["--cpus".into(), format!("{}", limits.cpus)]);
        args.extend(["--memory".into(), format!("{}b", limits.memory_bytes)]);
        for m in &spec.mounts {
            if m.container == OUTPUT_MOUNT {
                // write as the owner of the output directory so it can be sealed afterwards
                let meta = std::fs::metadata(&m.host).at(&m.host)?;
                args.extend(["--user".into(), format!("{}:{}", meta.uid(), meta.gid())]);
            }
            let mode = if m.writable { "rw" } else { "ro" };
            args.extend(["-v".into(), format!("{}:{}:{mode}", m.host.display(), m.container)]);
        }
        for (k, v) in &spec.env {
            args.extend(["-e".into(), format!("{k}={v}")]);
        }
        args.extend([
            "--entrypoint".into(),
            "/bin/sh".into(),
            spec.image_ref.clone(),
            "-c".into(),
            spec.command.clone(),
        ]);
        Ok(args)
    }

    fn output(&self, args: &[&str]) -> Result<std::process::Output> {
        Command::new(&self.runtime).args(args).output().at(&self.runtime)
    }
}

fn drain(mut r: impl Read + Send + 'static) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        buf
    })
}

impl ContainerBackend for OciBackend {
    fn name(&self) -> &'static str {
        "oci"
    }

    fn image_digest(&self, image_ref: &str) -> Result<String> {
        let out = self.output(&["image", "inspect", "--format", "{{.Id}}", image_ref])?;
        let id = String::from_utf8_lossy(&out.stdout).trim().to_string();
        if !out.status.success() || id.is_empty() {
            return Err(Error::ImageUnavailable(image_ref.to_string()));
        }
        Ok(id)
    }

    fn run(&self, spec: &SandboxSpec, limits: &ResourceLimits) -> Result<ContainerOutcome> {
        let args = self.run_args(spec, limits)?;
        self.launches.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let mut child = Command::new(&self.runtime)
            .args(&args)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .at(&self.runtime)?;
        let stdout = drain(child.stdout.take().expect("piped"));
        let stderr = drain(child.stderr.take().expect("piped"));
        let mut timed_out = false;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if started.elapsed() > limits.timeout {
                timed_out = true;
                let _ = self.output(&["kill", &spec.name]);
                let _ = child.kill();
                break child.wait()?;
            }
            thread::sleep(Duration::from_millis(20));
        };
        Ok(ContainerOutcome {
            exit_code: status.code().unwrap_or(-1),
            timed_out,
            stdout: stdout.join().unwrap_or_default(),
            stderr: stderr.join().unwrap_or_default(),
            violations: Vec::new(),
            wall: started.elapsed(),
        })
    }

    fn launches(&self) -> usize {
        self.launches.load(Ordering::SeqCst)
    }

    fn save_image(&self, image_ref: &str, dest: &Path) -> Result<()> {
        let dest_s = dest.display().to_string();
        let out = self.output(&["save", "-o", &dest_s, image_ref])?;
        if !out.status.success() {
            return Err(Error::ImageUnavailable(image_ref.to_string()));
        }
        Ok(())
    }

    fn load_image(&self, tarball: &Path) -> Result<()> {
        let src = tarball.display().to_string();
        let out = self.output(&["load", "-i", &src])?;
        if !out.status.success() {
            return Err(Error::Io(std::io::Error::other(format!(
                "loading {src} failed: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            ))));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::sandbox::{Mount, INPUT_MOUNT};
    use super::*;
    use std::collections::BTreeMap;
    use std::os::unix::fs::PermissionsExt;

    /// A stand-in runtime: records its arguments and, for `run`, writes a run
    /// file into the host side of the output mount.
    const FAKE_RUNTIME: &str = r#"#!/bin/sh
echo "$@" >> "$(dirname "$0")/calls.log"
case "$1" in
  image) [ "$5" = "present:1" ] && echo "sha256:feed" && exit 0; exit 1 ;;
  kill) exit 0 ;;
  run)
    prev=""
    for a in "$@"; do
      if [ "$prev" = "-v" ]; then
        host="${a%%:*}"; rest="${a#*:}"; ctr="${rest%%:*}"
        [ "$ctr" = "/mnt/output" ] && echo "q1 Q0 d1 1 1.0 fake" > "$host/run.txt"
      fi
      prev="$a"
    done
    case "$*" in *sleepy*) exec sleep 5 ;; esac
    echo "done"; exit 0 ;;
esac
exit 2
"#;

    fn setup() -> (tempfile::TempDir, OciBackend) {
        let dir = tempfile::tempdir().unwrap();
        let rt = dir.path().join("fake-runtime");
        std::fs::write(&rt, FAKE_RUNTIME).unwrap();
        std::fs::set_permissions(&rt, std::fs::Permissions::from_mode(0o755)).unwrap();
        (dir, OciBackend::new(rt))
    }

    fn spec(dir: &Path, command: &str) -> SandboxSpec {
        let (input, output) = (dir.join("in"), dir.join("out"));
        std::fs::create_dir_all(&input).unwrap();
        std::fs::create_dir_all(&output).unwrap();
        SandboxSpec {
            name: "irexp-test".into(),
            image_ref: "present:1".into(),
            command: command.into(),
            env: BTreeMap::from([("outputDir".to_string(), "/mnt/output".to_string())]),
            mounts: vec![
                Mount::read_only(input, INPUT_MOUNT),
                Mount {
                    host: output,
                    container: OUTPUT_MOUNT.into(),
                    writable: true,
                },
            ],
            network: false,
        }
    }

    #[test]
    fn image_lookup() {
        let (_d, b) = setup();
        assert_eq!(b.image_digest("present:1").unwrap(), "sha256:feed");
        assert!(matches!(b.image_digest("absent:1"), Err(Error::ImageUnavailable(r)) if r == "absent:1"));
    }

    #[test]
    fn run_uses_isolation_flags() {
        let (d, b) = setup();
        let s = spec(d.path(), "rank $inputDataset");
        let out = b.run(&s, &ResourceLimits::default()).unwrap();
        assert_eq!(out.exit_code, 0);
        assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "done");
        assert!(d.path().join("out/run.txt").is_file());
        let calls = std::fs::read_to_string(d.path().join("calls.log")).unwrap();
        assert!(calls.contains("--network none"));
        assert!(calls.contains("--read-only"));
        assert!(calls.contains(&format!("{}:/mnt/input:ro", d.path().join("in").display())));
        assert!(calls.contains(&format!("{}:/mnt/output:rw", d.path().join("out").display())));
        assert!(calls.contains("-e outputDir=/mnt/output"));
        assert_eq!(b.launches(), 1);
    }

    #[test]
    fn timeout_kills() {
        let (d, b) = setup();
        let s = spec(d.path(), "sleepy");
        let limits = ResourceLimits {
            timeout: Duration::from_millis(300),
            ..ResourceLimits::default()
        };
        let started = Instant::now();
        let out = b.run(&s, &limits).unwrap();
        assert!(out.timed_out);
        assert!(started.elapsed() < Duration::from_secs(4));
        let calls = std::fs::read_to_string(d.path().join("calls.log")).unwrap();
        assert!(calls.contains("kill irexp-test"));
    }
}
