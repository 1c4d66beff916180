"""Bundled example datasets; access via tramflow.fileio.load_dataset."""
