from .bench import console

console()
