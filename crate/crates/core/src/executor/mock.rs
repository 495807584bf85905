//! In-process container backend: images are Rust closures run against a
//! [`MockSandbox`].

use std::collections::BTreeMap;
use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use super::sandbox::{MockSandbox, Sandbox, SandboxSpec};
use super::{ContainerBackend, ContainerOutcome, ResourceLimits};
use crate::digest::Digest;
use crate::error::{Error, Result};

pub type Entrypoint = Arc<dyn Fn(&mut dyn Sandbox) -> i32 + Send + Sync>;

#[derive(Clone)]
pub struct MockImage {
    reference: String,
    digest: String,
    entrypoint: Entrypoint,
}

impl MockImage {
    pub fn new(reference: &str, entrypoint: impl Fn(&mut dyn Sandbox) -> i32 + Send + Sync + 'static) -> Self {
        MockImage {
            reference: reference.to_string(),
            digest: format!("sha256:{}", Digest::of_parts([("mock-image", reference)])),
            entrypoint: Arc::new(entrypoint),
        }
    }

    /// Same reference, different content: yields a different image digest.
    pub fn with_revision(mut self, revision: &str) -> Self {
        self.digest = format!(
            "sha256:{}",
            Digest::of_parts([("mock-image", self.reference.as_str()), ("revision", revision)])
        );
        self
    }

    pub fn reference(&self) -> &str {
        &self.reference
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }
}

impl fmt::Debug for MockImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MockImage")
            .field("reference", &self.reference)
            .field("digest", &self.digest)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Launch {
    pub name: String,
    pub image_ref: String,
    pub command: String,
}

#[derive(Debug, Default)]
pub struct MockBackend {
    images: RwLock<BTreeMap<String, MockImage>>,
    launches: AtomicUsize,
    log: Mutex<Vec<Launch>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// A backend preloaded with the bundled fixture images.
    pub fn with_fixtures() -> Self {
        let backend = Self::new();
        for image in crate::fixtures::mock_images() {
            backend.register(image);
        }
        backend
    }

    pub fn register(&self, image: MockImage) {
        self.images
            .write()
            .expect("image table poisoned")
            .insert(image.reference.clone(), image);
    }

    pub fn remove(&self, reference: &str) -> bool {
        self.images.write().expect("image table poisoned").remove(reference).is_some()
    }

    pub fn launch_log(&self) -> Vec<Launch> {
        self.log.lock().expect("launch log poisoned").clone()
    }

    fn image(&self, reference: &str) -> Result<MockImage> {
        self.images
            .read()
            .expect("image table poisoned")
            .get(reference)
            .cloned()
            .ok_or_else(|| Error::ImageUnavailable(reference.to_string()))
    }
}

impl ContainerBackend for MockBackend {
    fn name(&self) -> &'static str {
        "mock"
    }

    fn image_digest(&self, image_ref: &str) -> Result<String> {
        Ok(self.image(image_ref)?.digest)
    }

    fn run(&self, spec: &SandboxSpec, limits: &ResourceLimits) -> Result<ContainerOutcome> {
        spec.validate()?;
        let image = self.image(&spec.image_ref)?;
        self.launches.fetch_add(1, Ordering::SeqCst);
        self.log.lock().expect("launch log poisoned").push(Launch {
            name: spec.name.clone(),
            image_ref: spec.image_ref.clone(),
            command: spec.command.clone(),
        });
        let started = Instant::now();
        let mut sandbox = MockSandbox::new(spec);
        let result = panic::catch_unwind(AssertUnwindSafe(|| (image.entrypoint)(&mut sandbox)));
        let exit_code = result.unwrap_or_else(|_| {
            sandbox.stderr("component panicked\n");
            101
        });
        let wall = started.elapsed();
        Ok(ContainerOutcome {
            exit_code,
            timed_out: wall > limits.timeout,
            stdout: sandbox.stdout,
            stderr: sandbox.stderr,
            violations: sandbox.violations,
            wall,
        })
    }

    fn launches(&self) -> usize {
        self.launches.load(Ordering::SeqCst)
    }
}
