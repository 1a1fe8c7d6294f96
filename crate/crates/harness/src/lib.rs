//! Pipeline harness: configuration, workspace layout, and stage drivers.
