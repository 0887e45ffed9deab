# Tests package for the PIM design cost model
