# Empty file to make adapters a package