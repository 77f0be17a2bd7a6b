"""
Answer metrics, routing reports and the full-mode sweep
"""
