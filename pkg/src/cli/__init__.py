"""menuconnect command-line surface"""
