//! Book chapters compiled as doc-tests (wired up once the book lands).
