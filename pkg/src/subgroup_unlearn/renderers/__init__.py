"""Renderer subpackage.

Renderers turn evaluation reports into human-friendly formats. The HTML
renderer lays several reports out as one comparison table, one row per
method, with the restoration ratio printed as a subscript of each
accuracy.
"""
