# Tests for the contact process simulator
