//! Text classification machinery behind the name-recovery score: a regex
//! tokenizer, smooth-idf TF-IDF with L2 normalization, a Pegasos-trained
//! linear SVM, binary/macro F1 and stratified k-fold pair scoring.

pub mod cv;
pub mod metrics;
pub mod sparse;
pub mod svm;
pub mod tfidf;
pub mod tokenize;

pub use cv::{cv_pair_score, cv_pair_score_bags, CvPlan};
pub use metrics::{f1_binary, macro_f1};
pub use sparse::SparseVector;
pub use svm::{hinge_objective, predict, train_linear_svm, LinearModel, SvmConfig};
pub use tfidf::{fit_tfidf, smooth_idf, Bag, BagTfidf, TfidfModel, TokenIndex};
pub use tokenize::{tokenize, TokenizerConfig};
