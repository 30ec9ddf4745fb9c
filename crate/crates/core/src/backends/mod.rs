//! Clients for the generation and question-answering services.
//!
//! Both roles speak one small JSON protocol:
//!
//! * `POST /v1/complete` `{"preamble", "input"}` -> `{"text"}`
//! * `POST /v1/vqa` `{"question", "image_ref", "image_b64"}` -> `{"answer"}`
//!
//! Non-200 replies carry `{"error"}`. Model-specific prompt formatting is the
//! server's business; the engine only sends the preamble template and input.

mod http;
mod mock;

use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::SemanticTuple;

pub use http::{HttpGenerator, HttpQa, MAX_INLINE_IMAGE_BYTES};
pub use mock::{CallRecord, QaCall, ScriptEntry, ScriptedGenerator, SceneOracle};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("backend returned HTTP {status}: {message}")]
    HttpStatus { status: u16, message: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("{0}")]
    Unavailable(String),
}

impl BackendError {
    /// Timeouts, transport failures and 5xx replies may succeed when retried.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::Transport(_) => true,
            BackendError::HttpStatus { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompleteRequest {
    pub preamble: String,
    pub input: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaRequest {
    pub question: String,
    pub image_ref: Option<String>,
    pub image_b64: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaResponse {
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

/// A language model that completes a preamble template with an input.
pub trait GenerationBackend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, preamble: &str, input: &str) -> Result<String, BackendError>;
}

/// One yes/no question about one image.
///
/// `tuple` travels alongside so test oracles can answer from ground truth; it
/// is never sent over the wire.
#[derive(Debug, Clone, Copy)]
pub struct QaQuery<'a> {
    pub image_ref: &'a str,
    pub question: &'a str,
    pub tuple: Option<&'a SemanticTuple>,
}

/// A visual question answering model.
pub trait QaBackend: Send + Sync {
    fn name(&self) -> &str;

    fn ask(&self, query: &QaQuery<'_>) -> Result<String, BackendError>;
}

impl<T: GenerationBackend + ?Sized> GenerationBackend for &T {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, preamble: &str, input: &str) -> Result<String, BackendError> {
        (**self).complete(preamble, input)
    }
}

impl<T: GenerationBackend + ?Sized> GenerationBackend for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, preamble: &str, input: &str) -> Result<String, BackendError> {
        (**self).complete(preamble, input)
    }
}

impl<T: QaBackend + ?Sized> QaBackend for &T {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn ask(&self, query: &QaQuery<'_>) -> Result<String, BackendError> {
        (**self).ask(query)
    }
}

impl<T: QaBackend + ?Sized> QaBackend for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn ask(&self, query: &QaQuery<'_>) -> Result<String, BackendError> {
        (**self).ask(query)
    }
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn run<R>(&self, f: impl FnOnce() -> R) -> R {
        {
            let mut p = self.permits.lock().unwrap_or_else(|e| e.into_inner());
            while *p == 0 {
                p = self.freed.wait(p).unwrap_or_else(|e| e.into_inner());
            }
            *p -= 1;
        }
        struct Release<'a>(&'a Semaphore);
        impl Drop for Release<'_> {
            fn drop(&mut self) {
                *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
                self.0.freed.notify_one();
            }
        }
        let _release = Release(self);
        f()
    }
}

/// Caps the number of concurrent requests sent to the wrapped backend.
pub struct Limited<B> {
    inner: B,
    gate: Semaphore,
}

impl<B> Limited<B> {
    pub fn new(inner: B, max_in_flight: usize) -> Self {
        Limited {
            inner,
            gate: Semaphore::new(max_in_flight),
        }
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: GenerationBackend> GenerationBackend for Limited<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, preamble: &str, input: &str) -> Result<String, BackendError> {
        self.gate.run(|| self.inner.complete(preamble, input))
    }
}

impl<B: QaBackend> QaBackend for Limited<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn ask(&self, query: &QaQuery<'_>) -> Result<String, BackendError> {
        self.gate.run(|| self.inner.ask(query))
    }
}
