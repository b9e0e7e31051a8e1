//! Annotation-assist service: split submitted text into sentences, score
//! every trained label per sentence, record expert decisions and export
//! corrected gold data as corpus records.

mod app;
mod error;
mod sentences;
mod session;
pub mod store;

pub use app::{router, serve, AppState};
pub use error::{ErrorBody, ServeError};
pub use sentences::split_sentences;
pub use session::{Action, Decision, DocumentSession, ExportRecord, Suggestion};
pub use store::{read_log, DocumentStore};
